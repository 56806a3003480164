#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metaiqa/harness.hpp"
#include "metaiqa/model.hpp"

namespace metaiqa {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'Q', 'A'};
constexpr std::uint16_t kVersion = 1;

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::CorruptCheckpoint, std::string("corrupt checkpoint: truncated in ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamSet& params) {
  std::string out(kMagic, 4);
  put_le(out, kVersion, 2);
  const Digest& fp = params.fingerprint();
  out.append(reinterpret_cast<const char*>(fp.data()), fp.size());
  put_le(out, params.size(), 4);
  for (const auto& e : params.entries()) {
    require(e.name.size() <= 0xFFFF, "tensor name too long for a checkpoint");
    put_le(out, e.name.size(), 2);
    out += e.name;
    put_le(out, e.tensor.rank(), 1);
    for (auto d : e.tensor.shape()) put_le(out, d, 4);
    for (float v : e.tensor.data()) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  return out;
}

ParamSet decode_checkpoint(const std::string& bytes, const BackboneSpec& expected) {
  Reader r(bytes);
  if (r.raw(4, "magic") != std::string(kMagic, 4)) fail(ErrorKind::CorruptCheckpoint, "corrupt checkpoint: bad magic bytes");
  const auto version = r.le(2, "version");
  if (version != kVersion) {
    fail(ErrorKind::VersionMismatch, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                         std::to_string(kVersion) + ")");
  }
  const std::string fp = r.raw(32, "fingerprint");
  const Digest want = expected.fingerprint();
  if (std::memcmp(fp.data(), want.data(), want.size()) != 0) {
    fail(ErrorKind::FingerprintMismatch, "checkpoint architecture fingerprint does not match the configured backbone");
  }
  const auto count = r.le(4, "tensor count");
  const ParamSet reference = build_model(expected, 0);
  if (count != reference.size()) fail(ErrorKind::CorruptCheckpoint, "corrupt checkpoint: wrong tensor count");
  std::vector<ParamSet::Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    ParamSet::Entry e;
    e.name = r.raw(r.le(2, "tensor name length"), "tensor name");
    const auto rank = r.le(1, "tensor rank");
    Shape shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(r.le(4, "tensor dims"));
    if (e.name != reference.name(i) || shape != reference.tensor(i).shape()) {
      fail(ErrorKind::CorruptCheckpoint, "corrupt checkpoint: tensor " + std::to_string(i) + " ('" + e.name +
                                             "') does not match the backbone layout");
    }
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4, "tensor payload")));
    e.tensor = Tensor(shape, std::move(data), true);
    entries.push_back(std::move(e));
  }
  if (!r.done()) fail(ErrorKind::CorruptCheckpoint, "corrupt checkpoint: trailing bytes");
  return ParamSet(expected, std::move(entries));
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path, const CheckpointInfo& info) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot write checkpoint '" + path.string() + "'");
    const std::string bytes = encode_checkpoint(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::Io, "failed writing checkpoint '" + path.string() + "'");
  }
  std::ofstream meta(path.string() + ".meta", std::ios::binary);
  if (!meta) fail(ErrorKind::Io, "cannot write checkpoint sidecar for '" + path.string() + "'");
  meta << "config_hash=" << info.config_hash << "\nepoch=" << info.epoch << "\nchecksum=" << to_hex(params.checksum())
       << "\n";
}

ParamSet load_checkpoint(const std::filesystem::path& path, const BackboneSpec& expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot read checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str(), expected);
}

std::optional<CheckpointInfo> load_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream f(path.string() + ".meta", std::ios::binary);
  if (!f) return std::nullopt;
  CheckpointInfo info;
  for (std::string line; std::getline(f, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "config_hash") info.config_hash = value;
    if (key == "epoch") info.epoch = std::stoul(value);
  }
  return info;
}

}  // namespace metaiqa
