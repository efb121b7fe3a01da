//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// The comparison methods: random guessing, L2-raw, Buchmann, Tudor,
// Jawurek and Faisal.

#pragma once

#include "meterlink/baselines/distance.hpp"
#include "meterlink/baselines/features.hpp"
#include "meterlink/baselines/forest.hpp"
#include "meterlink/baselines/jawurek.hpp"
