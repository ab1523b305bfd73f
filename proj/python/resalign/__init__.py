# Copyright 2026 The resalign-toy Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for the resalign toy diffusion unlearning library."""

from ._core import (
    Config,
    ResalignError,
    Testbed,
    attack,
    dense_solve,
    derive_seed,
    evaluate,
    harmful_fraction,
    load_checkpoint,
    save_checkpoint,
    solve_quadratic_hypergrad,
    train_base,
    unlearn,
)

__all__ = [
    "Config",
    "ResalignError",
    "Testbed",
    "attack",
    "dense_solve",
    "derive_seed",
    "evaluate",
    "harmful_fraction",
    "load_checkpoint",
    "save_checkpoint",
    "solve_quadratic_hypergrad",
    "train_base",
    "unlearn",
]
