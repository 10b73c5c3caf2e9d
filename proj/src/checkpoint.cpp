#include "multiclip/checkpoint.hpp"

#include "multiclip/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace multiclip {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'C', 'L', 'I', 'P', 'C', 'K', 'P'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw Error(ErrorKind::Load, "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Eigen::MatrixXd* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

std::vector<std::pair<std::string, Eigen::MatrixXd>> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, Eigen::MatrixXd>> out;
  for (const auto& t : tensors) {
    if (t.first.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ck.kind);
  put_string(out, ck.config_json);
  put_string(out, ck.fingerprint);
  put<std::uint64_t>(out, ck.metadata.size());
  for (const auto& [k, v] : ck.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint64_t>(out, ck.tensors.size());
  for (const auto& [name, m] : ck.tensors) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.append(reinterpret_cast<const char*>(rm.data()), static_cast<std::size_t>(rm.size()) * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::Load, "not a checkpoint file");
  }
  const std::string body = bytes.substr(sizeof(kMagic));
  Reader r(body);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Load, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = r.get_string();
  ck.config_json = r.get_string();
  ck.fingerprint = r.get_string();
  const auto nmeta = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    std::string k = r.get_string();
    ck.metadata[k] = r.get_string();
  }
  const auto ntensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < ntensors; ++i) {
    std::string name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1ULL << 31) || cols > (1ULL << 31)) throw Error(ErrorKind::Load, "checkpoint tensor too large");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.read_doubles(rm.data(), static_cast<std::size_t>(rows * cols));
    ck.tensors.emplace_back(std::move(name), Eigen::MatrixXd(rm));
  }
  if (!r.done()) throw Error(ErrorKind::Load, "trailing bytes in checkpoint");
  if (fingerprint(ck.config_json) != ck.fingerprint) throw Error(ErrorKind::Load, "checkpoint fingerprint is corrupt");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Load, "cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::Load, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Load, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Checkpoint ck = deserialize_checkpoint(ss.str());
  if (expected && *expected != ck.fingerprint) {
    throw Error(ErrorKind::Load, "config fingerprint mismatch for " + path.string() + ": checkpoint " +
                                     ck.fingerprint + ", expected " + *expected);
  }
  return ck;
}

}  // namespace multiclip
