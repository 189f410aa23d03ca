#include "nacf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nacf {

namespace {

constexpr char kMagic[4] = {'N', 'A', 'C', 'F'};

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <class U>
  U get_le() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::FormatError, "truncated checkpoint " + origin_);
    }
  }

  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& rec : records) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    const Shape& shape = rec.value.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (float v : rec.value.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::MissingFile, "failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingFile, "cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  if (r.get_bytes(4) != std::string(kMagic, 4)) {
    throw Error(ErrorCode::FormatError, "bad magic in " + path.string());
  }
  const auto version = r.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::FormatError,
                "unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> records;
  while (!r.done()) {
    NamedTensor rec;
    rec.name = r.get_bytes(r.get_le<std::uint32_t>());
    const auto rank = r.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get_le<std::uint64_t>());
    std::vector<float> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<float>(r.get_le<std::uint32_t>());
    rec.value = Tensor<float>(std::move(shape), std::move(values));
    records.push_back(std::move(rec));
  }
  return records;
}

template <class T>
std::vector<NamedTensor> to_records(const ParameterStore<T>& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back({p.name, p.value.template cast<float>()});
  return out;
}

template <class T>
void assign_records(ParameterStore<T>& store, const std::vector<NamedTensor>& records) {
  if (records.size() != store.size()) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint has " + std::to_string(records.size()) +
                                              " tensors, model expects " +
                                              std::to_string(store.size()));
  }
  for (const auto& rec : records) {
    auto idx = store.find(rec.name);
    if (!idx) throw Error(ErrorCode::ShapeMismatch, "unexpected tensor " + rec.name);
    Parameter<T>& p = store[*idx];
    if (p.value.shape() != rec.value.shape()) {
      throw Error(ErrorCode::ShapeMismatch, rec.name + ": checkpoint shape " +
                                                shape_string(rec.value.shape()) +
                                                " vs model " + shape_string(p.value.shape()));
    }
    p.value = rec.value.template cast<T>();
  }
}

template std::vector<NamedTensor> to_records(const ParameterStore<float>&);
template std::vector<NamedTensor> to_records(const ParameterStore<double>&);
template void assign_records(ParameterStore<float>&, const std::vector<NamedTensor>&);
template void assign_records(ParameterStore<double>&, const std::vector<NamedTensor>&);

}  // namespace nacf
