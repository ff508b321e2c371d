#include "cada/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cada {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

template <typename T>
Checkpoint capture(Model<T>& model, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  model.visit_params([&](Parameter<T>& p) {
    c.blobs.push_back({p.name, p.value.shape(),
                       std::vector<float>(p.value.data().begin(), p.value.data().end())});
  });
  return c;
}

template <typename T>
void restore(Model<T>& model, const Checkpoint& ckpt) {
  std::size_t i = 0;
  model.visit_params([&](Parameter<T>& p) {
    if (i >= ckpt.blobs.size()) throw IoError("checkpoint is missing parameter " + p.name);
    const auto& b = ckpt.blobs[i++];
    if (b.name != p.name || b.shape != p.value.shape()) {
      throw IoError("checkpoint blob " + b.name + b.shape.str() + " does not match parameter " +
                    p.name + p.value.shape().str());
    }
    std::copy(b.data.begin(), b.data.end(), p.value.data().begin());
  });
  if (i != ckpt.blobs.size()) throw IoError("checkpoint has extra blobs");
}

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& f, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated checkpoint " + path.string());
  return v;
}

std::string get_bytes(std::ifstream& f, std::uint32_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !f.read(s.data(), n)) throw IoError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write("CADA", 4);
  put_u32(f, ckpt.version);
  put_u32(f, static_cast<std::uint32_t>(ckpt.config_text.size()));
  f.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  put_u32(f, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& b : ckpt.blobs) {
    put_u32(f, static_cast<std::uint32_t>(b.name.size()));
    f.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    for (int d : {b.shape.n, b.shape.c, b.shape.h, b.shape.w}) put_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(b.data.data()),
            static_cast<std::streamsize>(b.data.size() * sizeof(float)));
  }
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  if (get_bytes(f, 4, path) != "CADA") throw IoError("not a checkpoint (bad magic): " + path.string());
  Checkpoint c;
  c.version = get_u32(f, path);
  if (c.version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint " + path.string() + " has version " +
                                 std::to_string(c.version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  }
  c.config_text = get_bytes(f, get_u32(f, path), path);
  const std::uint32_t n = get_u32(f, path);
  for (std::uint32_t i = 0; i < n; ++i) {
    Checkpoint::Blob b;
    b.name = get_bytes(f, get_u32(f, path), path);
    b.shape.n = static_cast<int>(get_u32(f, path));
    b.shape.c = static_cast<int>(get_u32(f, path));
    b.shape.h = static_cast<int>(get_u32(f, path));
    b.shape.w = static_cast<int>(get_u32(f, path));
    b.data.resize(b.shape.numel());
    if (!b.data.empty() &&
        !f.read(reinterpret_cast<char*>(b.data.data()),
                static_cast<std::streamsize>(b.data.size() * sizeof(float)))) {
      throw IoError("truncated checkpoint " + path.string());
    }
    c.blobs.push_back(std::move(b));
  }
  return c;
}

template Checkpoint capture<float>(Model<float>&, const std::string&);
template Checkpoint capture<double>(Model<double>&, const std::string&);
template void restore<float>(Model<float>&, const Checkpoint&);
template void restore<double>(Model<double>&, const Checkpoint&);

}  // namespace cada
