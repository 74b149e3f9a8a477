#pragma once

#include <string>

#include "lidiff/config.hpp"
#include "lidiff/model.hpp"

namespace lidiff {

// Checkpoint layout: a directory of LTF tensors (one per parameter or buffer,
// file name "<tensor name>.ltf") plus manifest.txt with the run config and
// one "tensor=<name>;shape=<d0xd1..>;hash=<fnv64 hex>" line per tensor.
void save_checkpoint(const std::string& dir, const Network& net, const RunConfig& rc);

RunConfig read_checkpoint_config(const std::string& dir);

// Loads every manifest tensor into the (already constructed) network,
// verifying shapes and payload hashes.
void load_checkpoint_into(const std::string& dir, Network& net);

uint64_t tensor_payload_hash(const Tensor& t);

}  // namespace lidiff
