// SPDX-License-Identifier: Apache-2.0
#include "rppg/nn/checkpoint.hpp"

#include "rppg/binary_io.hpp"

namespace rppg::nn {

namespace {

constexpr std::string_view kMagic = "RMAE";

std::string shape_text(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.magic(kMagic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) w.u32(d);
    for (float v : a.data) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + " is not supported");
  }
  Checkpoint ckpt;
  ckpt.config = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.dims.push_back(r.u32());
      n *= a.dims.back();
    }
    a.data = r.f32_array(n);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { io::write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

template <typename T>
Checkpoint snapshot(const ParamStore<T>& store, std::string config, const OptimState<T>* optim) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  const auto& slots = store.slots();
  for (const auto& s : slots) {
    const auto v = s.tensor.values();
    ckpt.arrays.push_back({s.info.name,
                           {static_cast<std::uint32_t>(s.tensor.rows()), static_cast<std::uint32_t>(s.tensor.cols())},
                           std::vector<float>(v.begin(), v.end())});
  }
  if (optim != nullptr) {
    ckpt.arrays.push_back({std::string(kOptimPrefix) + "step", {1}, {float(optim->step)}});
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(slots[k].tensor.rows()),
                                            static_cast<std::uint32_t>(slots[k].tensor.cols())};
      const auto& m = optim->m[k];
      const auto& v = optim->v[k];
      ckpt.arrays.push_back({std::string(kOptimPrefix) + "m/" + slots[k].info.name, dims,
                             std::vector<float>(m.begin(), m.end())});
      ckpt.arrays.push_back({std::string(kOptimPrefix) + "v/" + slots[k].info.name, dims,
                             std::vector<float>(v.begin(), v.end())});
    }
  }
  return ckpt;
}

template <typename T>
void load_params(ParamStore<T>& store, const Checkpoint& ckpt, LoadMode mode) {
  std::size_t matched = 0;
  for (auto& s : store.slots()) {
    const bool wanted = mode == LoadMode::Strict || s.info.name.starts_with("encoder.");
    if (!wanted) continue;
    const NamedArray* a = ckpt.find(s.info.name);
    if (a == nullptr) fail(ErrorCode::CheckpointMismatch, "checkpoint has no parameter " + s.info.name);
    const std::vector<std::uint32_t> want{static_cast<std::uint32_t>(s.tensor.rows()),
                                          static_cast<std::uint32_t>(s.tensor.cols())};
    if (a->dims != want) {
      fail(ErrorCode::CheckpointMismatch,
           "parameter " + s.info.name + " has shape " + shape_text(a->dims) + ", model expects " + shape_text(want));
    }
    auto dst = s.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(a->data[i]);
    ++matched;
  }
  if (mode == LoadMode::Strict) {
    for (const auto& a : ckpt.arrays) {
      if (a.name.starts_with(kOptimPrefix)) continue;
      if (store.find(a.name) == nullptr) {
        fail(ErrorCode::CheckpointMismatch, "checkpoint parameter " + a.name + " does not exist in the model");
      }
    }
  } else if (matched == 0) {
    fail(ErrorCode::CheckpointMismatch, "partial load found no encoder parameters");
  }
}

template <typename T>
bool load_optim_state(const ParamStore<T>& store, const Checkpoint& ckpt, OptimState<T>& state) {
  const NamedArray* step = ckpt.find(std::string(kOptimPrefix) + "step");
  if (step == nullptr) return false;
  const auto& slots = store.slots();
  state.m.assign(slots.size(), {});
  state.v.assign(slots.size(), {});
  state.step = static_cast<std::size_t>(step->data.at(0));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const NamedArray* m = ckpt.find(std::string(kOptimPrefix) + "m/" + slots[k].info.name);
    const NamedArray* v = ckpt.find(std::string(kOptimPrefix) + "v/" + slots[k].info.name);
    if (m == nullptr || v == nullptr || m->data.size() != slots[k].tensor.size() ||
        v->data.size() != slots[k].tensor.size()) {
      fail(ErrorCode::CheckpointMismatch, "optimizer state missing or misshapen for " + slots[k].info.name);
    }
    state.m[k].assign(m->data.begin(), m->data.end());
    state.v[k].assign(v->data.begin(), v->data.end());
  }
  return true;
}

template Checkpoint snapshot<float>(const ParamStore<float>&, std::string, const OptimState<float>*);
template Checkpoint snapshot<double>(const ParamStore<double>&, std::string, const OptimState<double>*);
template void load_params<float>(ParamStore<float>&, const Checkpoint&, LoadMode);
template void load_params<double>(ParamStore<double>&, const Checkpoint&, LoadMode);
template bool load_optim_state<float>(const ParamStore<float>&, const Checkpoint&, OptimState<float>&);
template bool load_optim_state<double>(const ParamStore<double>&, const Checkpoint&, OptimState<double>&);

}  // namespace rppg::nn
