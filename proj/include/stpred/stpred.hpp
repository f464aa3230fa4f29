// Copyright 2026 The stpred Authors. All Rights Reserved.
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

#include "stpred/autodiff.hpp"
#include "stpred/binary_io.hpp"
#include "stpred/cells.hpp"
#include "stpred/checkpoint.hpp"
#include "stpred/config.hpp"
#include "stpred/curriculum.hpp"
#include "stpred/data.hpp"
#include "stpred/decoupling.hpp"
#include "stpred/errors.hpp"
#include "stpred/grad_check.hpp"
#include "stpred/metrics.hpp"
#include "stpred/network.hpp"
#include "stpred/ops.hpp"
#include "stpred/optim.hpp"
#include "stpred/rng.hpp"
#include "stpred/tensor.hpp"
#include "stpred/train.hpp"
