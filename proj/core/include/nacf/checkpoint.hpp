#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nacf/tape.hpp"

namespace nacf {

/// Owns every trainable tensor of a model in a fixed registration order.
/// The order defines gradient-buffer indices and the checkpoint layout.
template <class T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> init, bool decay) {
    if (index_.count(name)) {
      throw Error(ErrorCode::InvalidConfig, "duplicate parameter name " + name);
    }
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<T>{std::move(name), std::move(init), decay});
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) noexcept { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const noexcept { return params_[i]; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t element_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Zero tensors shaped like each parameter.
  std::vector<Tensor<T>> zeros_like() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.emplace_back(p.value.shape());
    return out;
  }

  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "NACF", u32 version, then per record
/// u32 name length, UTF-8 name, u32 rank, u64 dims, f32 values.
/// All integers and floats little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

template <class T>
std::vector<NamedTensor> to_records(const ParameterStore<T>& store);

/// Copies records into `store`; names and shapes must match exactly.
template <class T>
void assign_records(ParameterStore<T>& store, const std::vector<NamedTensor>& records);

}  // namespace nacf
