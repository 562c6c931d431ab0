// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

#include "cmdl/audio.hpp"
#include "cmdl/toylm.hpp"

namespace cmdl {

// The supervision unit: an utterance, its transcript, and bookkeeping.
struct AudioExample {
  std::string id;
  std::vector<int> transcript;
  Waveform audio;
  int pattern_id = -1;  // >= 0 when the transcript is a template body
  std::string split;    // train | dev | test
};

// Synthesizes one audio example per toy example, with a per-example rng
// substream so regeneration is order-independent and deterministic.
std::vector<AudioExample> synthesize_dataset(const std::vector<ToyExample>& examples,
                                             const SynthSpec& spec, const std::string& split,
                                             const std::string& id_prefix, uint64_t seed);

}  // namespace cmdl
