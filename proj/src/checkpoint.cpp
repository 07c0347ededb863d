#include "ipdfer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "ipdfer/errors.hpp"

namespace ipdfer::train {

namespace {

constexpr std::uint32_t kMagic = 0x4b435049;  // 'IPCK'
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("checkpoint: truncated file");
  return s;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(i)));
  for (std::int64_t i = 0; i < t.size(); ++i) put<float>(os, static_cast<float>(t[i]));
}

Tensor get_tensor(std::istream& is) {
  const auto rank = get<std::uint32_t>(is);
  std::vector<int> dims(rank);
  for (auto& d : dims) d = static_cast<int>(get<std::uint32_t>(is));
  Tensor t(dims);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(get<float>(is));
  return t;
}

void put_arch(std::ostream& os, const ArchConfig& a) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.feature_dim));
  for (int w : a.widths) put<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.width));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.channels));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.k_expressions));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.k_pose));
}

ArchConfig get_arch(std::istream& is) {
  ArchConfig a;
  a.feature_dim = static_cast<int>(get<std::uint32_t>(is));
  for (auto& w : a.widths) w = static_cast<int>(get<std::uint32_t>(is));
  a.height = static_cast<int>(get<std::uint32_t>(is));
  a.width = static_cast<int>(get<std::uint32_t>(is));
  a.channels = static_cast<int>(get<std::uint32_t>(is));
  a.k_expressions = static_cast<int>(get<std::uint32_t>(is));
  a.k_pose = static_cast<int>(get<std::uint32_t>(is));
  return a;
}

void write_file(const std::string& path, const CheckpointMeta& meta,
                const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                const std::vector<Adam*>& opts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  put<std::uint32_t>(os, kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.kind));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.mode));
  put_arch(os, meta.arch);
  put<std::uint64_t>(os, meta.seed);
  put<std::uint32_t>(os, meta.epoch);
  put<std::uint64_t>(os, meta.global_step);
  os.write(reinterpret_cast<const char*>(meta.e_id_digest.data()), static_cast<std::streamsize>(meta.e_id_digest.size()));
  put<double>(os, meta.pretrain_accuracy);

  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(os, name);
    put_tensor(os, *t);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(opts.size()));
  for (const Adam* opt : opts) {
    put_string(os, opt->name());
    put<std::uint64_t>(os, static_cast<std::uint64_t>(opt->step_count()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(opt->params().size()));
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      put_string(os, opt->params()[i]->name);
      put_tensor(os, opt->slot(i).m);
      put_tensor(os, opt->slot(i).v);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void quantize_f32(Tensor& t) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

void quantize_parameters(Net& net) {
  for (Parameter* p : net.parameters()) quantize_f32(p->value);
}

void write_checkpoint(const std::string& path, ModelBundle& bundle, const std::vector<Adam*>& opts,
                      CheckpointMeta meta) {
  for (Net* n : bundle.nets()) quantize_parameters(*n);
  for (Adam* opt : opts)
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      quantize_f32(opt->slot(i).m);
      quantize_f32(opt->slot(i).v);
    }
  meta.kind = CheckpointKind::bundle;
  meta.mode = bundle.mode;
  meta.arch = bundle.arch;
  meta.e_id_digest = bundle.e_id ? bundle.e_id->digest() : Digest{};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Net* n : bundle.nets())
    for (Parameter* p : n->parameters()) tensors.emplace_back(p->name, &p->value);
  write_file(path, meta, tensors, opts);
}

void write_identity_checkpoint(const std::string& path, ConvEncoder& e_id, CheckpointMeta meta) {
  quantize_parameters(e_id);
  meta.kind = CheckpointKind::identity_encoder;
  meta.e_id_digest = e_id.digest();
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Parameter* p : e_id.parameters()) tensors.emplace_back(p->name, &p->value);
  write_file(path, meta, tensors, {});
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  if (get<std::uint32_t>(is) != kMagic) throw FormatError("checkpoint: bad magic in " + path);
  if (get<std::uint32_t>(is) != kVersion) throw FormatError("checkpoint: unsupported version");
  CheckpointData data;
  data.meta.kind = static_cast<CheckpointKind>(get<std::uint32_t>(is));
  data.meta.mode = static_cast<Mode>(get<std::uint32_t>(is));
  data.meta.arch = get_arch(is);
  data.meta.seed = get<std::uint64_t>(is);
  data.meta.epoch = get<std::uint32_t>(is);
  data.meta.global_step = get<std::uint64_t>(is);
  is.read(reinterpret_cast<char*>(data.meta.e_id_digest.data()), static_cast<std::streamsize>(data.meta.e_id_digest.size()));
  if (!is) throw FormatError("checkpoint: truncated file");
  data.meta.pretrain_accuracy = get<double>(is);

  const auto n_tensors = get<std::uint32_t>(is);
  data.tensors.reserve(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = get_string(is);
    data.tensors.emplace_back(std::move(name), get_tensor(is));
  }
  const auto n_opts = get<std::uint32_t>(is);
  data.opt_states.resize(n_opts);
  for (auto& st : data.opt_states) {
    st.name = get_string(is);
    st.t = static_cast<std::int64_t>(get<std::uint64_t>(is));
    const auto n_slots = get<std::uint32_t>(is);
    st.slots.reserve(n_slots);
    for (std::uint32_t i = 0; i < n_slots; ++i) {
      std::string pname = get_string(is);
      Tensor m = get_tensor(is);
      Tensor v = get_tensor(is);
      st.slots.emplace_back(std::move(pname), std::move(m), std::move(v));
    }
  }
  return data;
}

namespace {

void fill_net_params(const std::map<std::string, const Tensor*>& by_name, Net& net) {
  for (Parameter* p : net.parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + p->name);
    if (!it->second->same_shape(p->value))
      throw FormatError("checkpoint: shape mismatch for " + p->name + ": " + it->second->shape_str() + " vs " +
                        p->value.shape_str());
    p->value = *it->second;
  }
}

std::map<std::string, const Tensor*> tensor_index(const CheckpointData& data) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : data.tensors) by_name[name] = &t;
  return by_name;
}

}  // namespace

void apply_to_bundle(const CheckpointData& data, ModelBundle& bundle) {
  if (data.meta.kind != CheckpointKind::bundle) throw FormatError("checkpoint: not a model bundle checkpoint");
  if (data.meta.mode != bundle.mode) throw ConfigError("checkpoint mode does not match bundle mode");
  if (!(data.meta.arch == bundle.arch)) throw ConfigError("checkpoint architecture does not match bundle");
  auto by_name = tensor_index(data);
  std::size_t expected = 0;
  for (Net* n : bundle.nets()) {
    fill_net_params(by_name, *n);
    expected += n->parameters().size();
  }
  if (expected != data.tensors.size()) throw FormatError("checkpoint: unexpected extra tensors");
  if (bundle.e_id) {
    bundle.e_id->set_trainable(false);
    if (bundle.e_id->digest() != data.meta.e_id_digest)
      throw FormatError("checkpoint: identity encoder digest mismatch");
  }
}

void apply_to_optimizer(const CheckpointData& data, Adam& opt) {
  for (const auto& st : data.opt_states) {
    if (st.name != opt.name()) continue;
    std::map<std::string, std::pair<const Tensor*, const Tensor*>> by_name;
    for (const auto& [pname, m, v] : st.slots) by_name[pname] = {&m, &v};
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      auto it = by_name.find(opt.params()[i]->name);
      if (it == by_name.end()) throw FormatError("checkpoint: missing optimizer state for " + opt.params()[i]->name);
      opt.slot(i).m = *it->second.first;
      opt.slot(i).v = *it->second.second;
    }
    opt.set_step_count(st.t);
    return;
  }
  throw FormatError("checkpoint: no optimizer state named " + opt.name());
}

std::unique_ptr<ModelBundle> bundle_from_checkpoint(const CheckpointData& data) {
  auto bundle = std::make_unique<ModelBundle>(data.meta.mode, data.meta.arch, data.meta.seed);
  apply_to_bundle(data, *bundle);
  return bundle;
}

void apply_identity_encoder(const CheckpointData& data, ModelBundle& bundle) {
  if (data.meta.kind != CheckpointKind::identity_encoder)
    throw FormatError("checkpoint: not an identity encoder checkpoint");
  if (!bundle.e_id) throw ConfigError("bundle mode '" + mode_name(bundle.mode) + "' has no identity encoder");
  const ArchConfig& a = data.meta.arch;
  const ArchConfig& b = bundle.arch;
  if (a.feature_dim != b.feature_dim || a.widths != b.widths || a.height != b.height || a.width != b.width ||
      a.channels != b.channels)
    throw ConfigError("identity encoder architecture does not match bundle");
  fill_net_params(tensor_index(data), *bundle.e_id);
  bundle.e_id->set_trainable(false);
  if (bundle.e_id->digest() != data.meta.e_id_digest)
    throw FormatError("checkpoint: identity encoder digest mismatch");
}

}  // namespace ipdfer::train
