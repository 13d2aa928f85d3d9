#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vmbh/error.hpp"
#include "vmbh/train.hpp"

namespace vmbh::train {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxDims = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("record file '" + path_ + "' is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u(int width) {
    auto p = reinterpret_cast<const unsigned char*>(take(static_cast<std::size_t>(width)));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_records(const std::string& path, const char magic[4], const std::vector<Record>& records) {
  std::string out(magic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    const auto& shape = r.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u64(out, d);
    for (double v : r.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

std::vector<Record> read_records(const std::string& path, const char magic[4]) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  Reader in(std::string(std::istreambuf_iterator<char>(f), {}), path);
  if (std::memcmp(in.take(4), magic, 4) != 0) {
    throw FormatError("'" + path + "' has bad magic (expected " + std::string(magic, 4) + ")");
  }
  auto version = in.u(4);
  if (version != kVersion) throw FormatError("'" + path + "' has unsupported version " + std::to_string(version));
  auto count = in.u(4);
  std::vector<Record> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto len = in.u(4);
    if (len > kMaxNameLength) throw FormatError("'" + path + "' record " + std::to_string(i) + " has an oversized name");
    std::string name(in.take(len), len);
    auto ndim = in.u(4);
    if (ndim > kMaxDims) throw FormatError("'" + path + "' record '" + name + "' has too many dimensions");
    Shape shape(ndim);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = in.u(8);
      if (d == 0 || n > in.remaining() / 8 / d) throw FormatError("'" + path + "' record '" + name + "' has a bad shape");
      n *= d;
    }
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(in.u(8));
    records.push_back({name, Tensor::from(shape, std::move(data))});
  }
  if (!in.done()) throw FormatError("'" + path + "' has trailing bytes");
  return records;
}

void save_checkpoint(const pipeline::Model& model, const std::string& path) {
  std::vector<Record> records;
  for (const auto& p : model.parameters()) records.push_back({p.name, p.tensor});
  write_records(path, "VMBH", records);
}

void load_checkpoint(pipeline::Model& model, const std::string& path) {
  auto records = read_records(path, "VMBH");
  auto params = model.parameters();
  std::size_t n = std::min(records.size(), params.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i].name != params[i].name || records[i].tensor.shape() != params[i].tensor.shape()) {
      throw FormatError("checkpoint record " + std::to_string(i) + " '" + records[i].name + "' " +
                        shape_str(records[i].tensor.shape()) + " does not match model parameter '" + params[i].name +
                        "' " + shape_str(params[i].tensor.shape()));
    }
  }
  if (records.size() != params.size()) {
    std::string first = records.size() > params.size() ? "checkpoint record '" + records[n].name + "'"
                                                        : "model parameter '" + params[n].name + "'";
    throw FormatError("checkpoint has " + std::to_string(records.size()) + " records, model has " +
                      std::to_string(params.size()) + " parameters; first unmatched: " + first);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto src = records[i].tensor.data();
    auto dst = params[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

namespace {

const char* const kSampleFields[] = {"image",  "theta_l", "theta_r",    "beta_l",     "beta_r", "joints_l",
                                     "joints_r", "vertices_l", "vertices_r", "t_rel", "two_hand"};

}  // namespace

void save_dataset(const std::vector<TrainingSample>& data, const std::string& path) {
  std::vector<Record> records;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& d = data[i];
    const Tensor fields[] = {d.image,    d.theta_l,    d.theta_r,    d.beta_l, d.beta_r, d.joints_l,
                             d.joints_r, d.vertices_l, d.vertices_r, d.t_rel,  Tensor::from({1}, {d.two_hand ? 1.0 : 0.0})};
    for (std::size_t f = 0; f < std::size(kSampleFields); ++f) {
      records.push_back({"sample" + std::to_string(i) + "." + kSampleFields[f], fields[f]});
    }
  }
  write_records(path, "VMBD", records);
}

std::vector<TrainingSample> load_dataset(const std::string& path) {
  auto records = read_records(path, "VMBD");
  const std::size_t per = std::size(kSampleFields);
  if (records.size() % per != 0) throw FormatError("dataset '" + path + "' has an incomplete sample");
  std::vector<TrainingSample> data(records.size() / per);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& d = data[i];
    Tensor* fields[] = {&d.image,    &d.theta_l,    &d.theta_r,    &d.beta_l, &d.beta_r, &d.joints_l,
                        &d.joints_r, &d.vertices_l, &d.vertices_r, &d.t_rel};
    for (std::size_t f = 0; f < per; ++f) {
      const auto& r = records[i * per + f];
      std::string expected = "sample" + std::to_string(i) + "." + kSampleFields[f];
      if (r.name != expected) throw FormatError("dataset '" + path + "' expected record '" + expected + "', found '" + r.name + "'");
      if (f + 1 < per) {
        *fields[f] = r.tensor;
      } else {
        d.two_hand = r.tensor.numel() == 1 && r.tensor.data()[0] != 0.0;
      }
    }
  }
  return data;
}

}  // namespace vmbh::train
