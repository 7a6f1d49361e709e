#include "alignps/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace alignps {

namespace {

constexpr char kMagic[8] = {'A', 'P', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 8);
  write_pod<uint64_t>(f, data.tensors.size() + data.blobs.size());
  for (const auto& [name, t] : data.tensors) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(f, 0);
    write_pod<uint8_t>(f, static_cast<uint8_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_pod<int64_t>(f, t.dim(d));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  for (const auto& [name, blob] : data.blobs) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(f, 1);
    write_pod<uint64_t>(f, blob.size());
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint64_t n = read_pod<uint64_t>(f);
  CheckpointData data;
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint8_t kind = read_pod<uint8_t>(f);
    if (kind == 0) {
      const uint8_t ndim = read_pod<uint8_t>(f);
      std::vector<int> dims;
      for (int d = 0; d < ndim; ++d) dims.push_back(static_cast<int>(read_pod<int64_t>(f)));
      Tensord t(dims);
      f.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!f) throw std::runtime_error("checkpoint: truncated tensor " + name);
      data.tensors.emplace(std::move(name), std::move(t));
    } else {
      const uint64_t len = read_pod<uint64_t>(f);
      std::string blob(len, '\0');
      f.read(blob.data(), static_cast<std::streamsize>(len));
      if (!f) throw std::runtime_error("checkpoint: truncated blob " + name);
      data.blobs.emplace(std::move(name), std::move(blob));
    }
  }
  return data;
}

namespace {

void snapshot_memory(CheckpointData& out, const std::string& prefix, const ReidMemory& mem) {
  out.tensors[prefix + "/lut"] = mem.lut();
  Tensord q({std::max(1, mem.queue_count()), mem.config().d});
  for (int i = 0; i < mem.queue_count(); ++i)
    for (int c = 0; c < mem.config().d; ++c) q(i, c) = mem.queue_rows()[static_cast<size_t>(i)][c];
  out.tensors[prefix + "/queue"] = q;
  out.tensors[prefix + "/queue_len"] = Tensord::scalar(mem.queue_count());
}

void restore_memory(const CheckpointData& data, const std::string& prefix, ReidMemory& mem) {
  const auto lut = data.tensors.find(prefix + "/lut");
  const auto queue = data.tensors.find(prefix + "/queue");
  const auto qlen = data.tensors.find(prefix + "/queue_len");
  if (lut == data.tensors.end() || queue == data.tensors.end() || qlen == data.tensors.end())
    throw std::runtime_error("checkpoint/config mismatch: missing memory entries " + prefix);
  mem.set_state(lut->second, queue->second, static_cast<int>(qlen->second[0]));
}

}  // namespace

CheckpointData snapshot_training(const PersonSearchModel& model, const SgdOptimizer& opt,
                                 const TrainState& state) {
  CheckpointData out;
  for (const auto& [name, var] : model.params().items())
    out.tensors["param/" + name] = var->value;
  const auto& vel = const_cast<SgdOptimizer&>(opt).velocities();
  const auto& items = model.params().items();
  for (size_t i = 0; i < items.size(); ++i)
    out.tensors["opt/velocity/" + items[i].first] = vel[i];
  snapshot_memory(out, "memory/align",
                  const_cast<PersonSearchModel&>(model).memory_align());
  snapshot_memory(out, "memory/roi", const_cast<PersonSearchModel&>(model).memory_roi());
  out.tensors["meta/epoch"] = Tensord::scalar(state.epoch);
  out.tensors["meta/step"] = Tensord::scalar(static_cast<double>(state.step));
  out.blobs["meta/config"] = config_to_toml(model.config());
  out.blobs["meta/rng"] = state.rng_state;
  out.blobs["meta/dataset_hash"] = state.dataset_hash;
  return out;
}

LoadedCheckpoint load_model_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  out.raw = load_checkpoint_file(path);
  const auto cfg_blob = out.raw.blobs.find("meta/config");
  if (cfg_blob == out.raw.blobs.end())
    throw std::runtime_error("checkpoint/config mismatch: missing meta/config");
  out.cfg = config_from_toml_string(cfg_blob->second);

  const auto lut = out.raw.tensors.find("memory/align/lut");
  if (lut == out.raw.tensors.end())
    throw std::runtime_error("checkpoint/config mismatch: missing memory/align/lut");
  const int num_ids = lut->second.dim(0);

  out.model = std::make_unique<PersonSearchModel>(out.cfg, num_ids);
  for (const auto& [name, var] : out.model->params().items()) {
    const auto it = out.raw.tensors.find("param/" + name);
    if (it == out.raw.tensors.end())
      throw std::runtime_error("checkpoint/config mismatch: missing parameter " + name);
    if (!it->second.same_shape(var->value))
      throw std::runtime_error("checkpoint/config mismatch: shape of " + name + " is " +
                               it->second.shape_str() + ", expected " +
                               var->value.shape_str());
    var->value = it->second;
  }
  restore_memory(out.raw, "memory/align", out.model->memory_align());
  restore_memory(out.raw, "memory/roi", out.model->memory_roi());

  out.state.epoch = static_cast<int>(out.raw.tensors.at("meta/epoch")[0]);
  out.state.step = static_cast<long>(out.raw.tensors.at("meta/step")[0]);
  if (out.raw.blobs.count("meta/rng")) out.state.rng_state = out.raw.blobs.at("meta/rng");
  if (out.raw.blobs.count("meta/dataset_hash"))
    out.state.dataset_hash = out.raw.blobs.at("meta/dataset_hash");
  return out;
}

void restore_optimizer(const CheckpointData& data, const PersonSearchModel& model,
                       SgdOptimizer& opt) {
  const auto& items = model.params().items();
  for (size_t i = 0; i < items.size(); ++i) {
    const auto it = data.tensors.find("opt/velocity/" + items[i].first);
    if (it == data.tensors.end())
      throw std::runtime_error("checkpoint/config mismatch: missing optimizer state for " +
                               items[i].first);
    opt.velocities()[i] = it->second;
  }
}

}  // namespace alignps
