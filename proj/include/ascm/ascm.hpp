// ascm/ascm.hpp

// Copyright 2026 The ASCM Authors
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

#include "ascm/audio.hpp"
#include "ascm/backend.hpp"
#include "ascm/cnn.hpp"
#include "ascm/common.hpp"
#include "ascm/config.hpp"
#include "ascm/experiment.hpp"
#include "ascm/features.hpp"
#include "ascm/fusion.hpp"
#include "ascm/gmm.hpp"
#include "ascm/io.hpp"
#include "ascm/ivector.hpp"
#include "ascm/metrics.hpp"
#include "ascm/models.hpp"
#include "ascm/scores.hpp"
#include "ascm/synth.hpp"
