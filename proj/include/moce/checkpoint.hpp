// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// A checkpoint is a directory:
//   manifest.txt    versioned key = value text (model config, step, paths)
//   parameters.bin  length-prefixed name table, then one little-endian
//                   float64 blob per named tensor
// plus whatever companion files the manifest points at (clustering model,
// vocabulary), written by the caller.

#pragma once

#include "moce/kv.hpp"
#include "moce/model.hpp"

#include <string>

namespace moce {

inline constexpr const char* kCheckpointFormat = "moce-checkpoint-v1";

struct Checkpoint {
    MoceModel model;
    /// Everything in the manifest that is not a model.* key.
    KeyValues meta;
};

void write_parameters(const std::string& path, const NamedTensors& tensors);
/// Fills `tensors` in place by name; names, order and shapes must match.
void read_parameters(const std::string& path, const NamedTensors& tensors);

void save_checkpoint(const std::string& dir, const MoceModel& model, const KeyValues& meta);
Checkpoint load_checkpoint(const std::string& dir);

} // namespace moce
