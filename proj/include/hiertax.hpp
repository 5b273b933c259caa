// Copyright 2026 The hiertax Authors.
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

#ifndef HIERTAX_HIERTAX_HPP_
#define HIERTAX_HIERTAX_HPP_

#include "hiertax/config.hpp"
#include "hiertax/error.hpp"
#include "hiertax/eval.hpp"
#include "hiertax/gradcheck.hpp"
#include "hiertax/linalg.hpp"
#include "hiertax/losses.hpp"
#include "hiertax/model.hpp"
#include "hiertax/ood_filter.hpp"
#include "hiertax/random.hpp"
#include "hiertax/synthdata.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/textio.hpp"
#include "hiertax/trainers.hpp"

#endif  // HIERTAX_HIERTAX_HPP_
