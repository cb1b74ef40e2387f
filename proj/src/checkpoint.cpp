#include "harvim/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'M', 'F'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint64_t take_uint(std::size_t width) {
    if (pos_ + width > bytes_.size()) truncated();
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::string take_bytes(std::size_t count) {
    if (pos_ + count > bytes_.size()) truncated();
    std::string out = bytes_.substr(pos_, count);
    pos_ += count;
    return out;
  }

  float take_f32() {
    const std::uint32_t bits = static_cast<std::uint32_t>(take_uint(4));
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  [[noreturn]] void truncated() const {
    throw IoError("checkpoint " + path_ + ": truncated at byte " +
                  std::to_string(pos_));
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointRecords& records) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, kVersion);
  for (const auto& [name, tensor] : records) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u64(buf, tensor.rank());
    for (std::size_t d : tensor.shape()) put_u64(buf, d);
    for (double v : tensor.data()) put_f32(buf, static_cast<float>(v));
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

CheckpointRecords load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());

  Reader r(bytes, path);
  if (r.take_bytes(4) != std::string(kMagic, 4)) {
    throw IoError("checkpoint " + path + ": bad magic");
  }
  const auto version = r.take_uint(2);
  if (version != kVersion) {
    throw IoError("checkpoint " + path + ": unsupported version " +
                  std::to_string(version));
  }

  CheckpointRecords records;
  while (!r.at_end()) {
    const auto name_len = r.take_uint(4);
    std::string name = r.take_bytes(name_len);
    const auto rank = r.take_uint(8);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.take_uint(8);
      count *= d;
    }
    std::vector<double> data(count);
    for (auto& v : data) v = static_cast<double>(r.take_f32());
    records.emplace_back(std::move(name),
                         Tensor::from_data(std::move(shape), std::move(data)));
  }
  return records;
}

}  // namespace harvim
