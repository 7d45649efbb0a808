#include "gnf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gnf {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_array(std::ostream& out, std::span<const T> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    if (!in_.read(reinterpret_cast<char*>(&v), sizeof(T))) fail(std::string("truncated while reading ") + what);
    return v;
  }

  template <typename T>
  void get_array(std::span<T> out, const char* what) {
    if (!in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
      fail(std::string("truncated while reading ") + what);
    }
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ContractError(name_ + ": " + msg); }

 private:
  std::istream& in_;
  std::string name_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const auto& model = ck.model;
  const auto& g = model.grid.config();
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.task));
  put<std::uint64_t>(out, ck.step);

  put<std::uint32_t>(out, g.dim);
  put<std::uint32_t>(out, g.levels);
  put<std::uint32_t>(out, g.n_min);
  put<std::uint32_t>(out, g.n_max);
  put<std::uint32_t>(out, g.features_per_level);
  put<std::uint32_t>(out, g.table_size);
  put<double>(out, g.init_scale);
  put<std::uint64_t>(out, model.grid.params().size());
  put_array<float>(out, model.grid.params());

  const auto& d = model.decoder;
  put<std::uint32_t>(out, d.kernels());
  put<std::uint32_t>(out, d.in_dim());
  put<std::uint32_t>(out, d.out_dim());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.mode()));
  put_array<float>(out, d.centers);
  put_array<float>(out, d.log_bandwidths);
  put_array<float>(out, d.weights);

  std::ostringstream task;
  if (model.task == Task::image) {
    put<std::uint32_t>(task, ck.image_width);
    put<std::uint32_t>(task, ck.image_height);
  } else if (model.task == Task::radiance) {
    const auto& r = ck.radiance;
    for (double v : r.background) put<double>(task, v);
    for (int a = 0; a < 3; ++a) put<double>(task, r.bounds_center[a]);
    put<double>(task, r.bounds_radius);
    put<double>(task, r.density_bias);
  }
  const std::string payload = task.str();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ck);
  if (!out) throw ContractError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in, const std::string& name) {
  Reader r(in, name);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const auto task_tag = r.get<std::uint32_t>("task");
  if (task_tag > static_cast<std::uint32_t>(Task::radiance)) r.fail("unknown task tag " + std::to_string(task_tag));
  Checkpoint ck;
  ck.step = r.get<std::uint64_t>("step");

  GridConfig g;
  g.dim = static_cast<int>(r.get<std::uint32_t>("dim"));
  g.levels = static_cast<int>(r.get<std::uint32_t>("levels"));
  g.n_min = static_cast<int>(r.get<std::uint32_t>("n_min"));
  g.n_max = static_cast<int>(r.get<std::uint32_t>("n_max"));
  g.features_per_level = static_cast<int>(r.get<std::uint32_t>("features_per_level"));
  g.table_size = r.get<std::uint32_t>("table_size");
  g.init_scale = r.get<double>("init_scale");
  try {
    g.validate();
  } catch (const ContractError& e) {
    r.fail(e.what());
  }
  const auto entries = r.get<std::uint64_t>("table entry count");

  FieldModel<float> model;
  model.task = static_cast<Task>(task_tag);
  model.grid = FeatureGrid<float>(g);
  if (model.grid.params().size() != entries) {
    r.fail("table entry count " + std::to_string(entries) + " does not match the encoder config");
  }
  r.get_array<float>(model.grid.params(), "tables");

  const auto kernels = static_cast<int>(r.get<std::uint32_t>("kernel count"));
  const auto in_dim = static_cast<int>(r.get<std::uint32_t>("decoder input width"));
  const auto out_dim = static_cast<int>(r.get<std::uint32_t>("decoder output width"));
  const auto mode = r.get<std::uint32_t>("kernel mode");
  if (mode > static_cast<std::uint32_t>(KernelMode::anisotropic)) r.fail("unknown kernel mode " + std::to_string(mode));
  if (in_dim != g.feature_dim()) {
    r.fail("decoder input width " + std::to_string(in_dim) + " does not match encoder feature width " +
           std::to_string(g.feature_dim()));
  }
  if (kernels < 1 || out_dim < 1 || kernels > (1 << 20) || out_dim > (1 << 16)) r.fail("decoder dimensions out of range");
  model.decoder = GaussianRbfLayer<float>(kernels, in_dim, out_dim, static_cast<KernelMode>(mode));
  r.get_array<float>(std::span<float>(model.decoder.centers), "centers");
  r.get_array<float>(std::span<float>(model.decoder.log_bandwidths), "log-bandwidths");
  r.get_array<float>(std::span<float>(model.decoder.weights), "weights");
  model.decoder.sync_bandwidths();

  const auto task_bytes = r.get<std::uint32_t>("task section size");
  if (model.task == Task::image) {
    if (task_bytes != 8) r.fail("malformed image task section");
    ck.image_width = static_cast<int>(r.get<std::uint32_t>("image width"));
    ck.image_height = static_cast<int>(r.get<std::uint32_t>("image height"));
  } else if (model.task == Task::radiance) {
    if (task_bytes != 8 * 8) r.fail("malformed radiance task section");
    auto& rs = ck.radiance;
    for (auto& v : rs.background) v = r.get<double>("background");
    for (int a = 0; a < 3; ++a) rs.bounds_center[a] = r.get<double>("bounds center");
    rs.bounds_radius = r.get<double>("bounds radius");
    rs.density_bias = r.get<double>("density bias");
    if (out_dim != kRadianceOutputs) r.fail("radiance decoder must have 49 outputs");
  } else if (task_bytes != 0) {
    r.fail("unexpected task section for an sdf checkpoint");
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after checkpoint");
  ck.model = std::move(model);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace gnf
