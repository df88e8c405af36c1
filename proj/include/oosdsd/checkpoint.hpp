#pragma once

#include "oosdsd/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace oosdsd {

/// Named parameter and buffer values of a network plus its architecture.
struct Checkpoint {
  struct Entry {
    std::vector<Eigen::Index> shape;
    std::vector<float> values;
  };
  NetworkConfig net;
  std::map<std::string, Entry> tensors;
  /// Free-form metadata (run config snapshot, epoch, metrics).
  nlohmann::json meta = nlohmann::json::object();
};

template <typename Scalar>
Checkpoint capture(Network<Scalar>& net, nlohmann::json meta = nlohmann::json::object());

/// Copies every tensor into net. Throws KeyMismatchError when the key sets or shapes differ.
template <typename Scalar>
void restore(Network<Scalar>& net, const Checkpoint& ckpt);

/// Seeded Kaiming-uniform initialization of every block; with a pretrained checkpoint,
/// blocks 0-22 are then overwritten from it. Every block 0-22 tensor of net must be present
/// with a matching shape, otherwise KeyMismatchError.
template <typename Scalar>
void init_parameters(Network<Scalar>& net, std::uint64_t seed, const Checkpoint* pretrained = nullptr);

/// Binary layout: "OOSDSDCK", u32 version, u64 header length, JSON header (config, tensor
/// directory, meta), then little-endian float32 data in directory order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

extern template Checkpoint capture<float>(Network<float>&, nlohmann::json);
extern template Checkpoint capture<double>(Network<double>&, nlohmann::json);
extern template void restore<float>(Network<float>&, const Checkpoint&);
extern template void restore<double>(Network<double>&, const Checkpoint&);
extern template void init_parameters<float>(Network<float>&, std::uint64_t, const Checkpoint*);
extern template void init_parameters<double>(Network<double>&, std::uint64_t, const Checkpoint*);

} // namespace oosdsd
