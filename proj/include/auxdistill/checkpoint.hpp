#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxdistill/nn.hpp"
#include "auxdistill/popart.hpp"

namespace auxdistill {

// Binary checkpoint, all integers and doubles little-endian:
//   "AUXDCKPT" | u32 version | u32 obs_dim | u32 num_tasks | u32 layer_count
//   | layer_count x (u32 in, u32 out) | f64 params[...]
//   | i64 adam_step | f64 beta1 | f64 beta2 | f64 eps | f64 m[...] | f64 v[...]
//   | u32 popart_tasks | f64 popart_beta | popart_tasks x (f64 mu, f64 nu, f64 sigma, u8 seeded)
// Parameter arrays follow layer order enc1, enc2, policy_head, value_head,
// each weight (row-major, in x out) then bias.
inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'U', 'X', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nn::PolicyParams params;
  nn::AdamState adam;
  PopArtState popart;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 4);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_array(std::ostream& os, const nn::PolicyParams& p) {
  for (double x : p.flatten()) put_f64(os, x);
}

inline void get_array(std::istream& is, nn::PolicyParams& p) {
  std::vector<double> flat(p.parameter_count());
  for (double& x : flat) x = get_f64(is);
  p.assign(flat);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto& p = ck.params;
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(p.obs_dim));
  detail::put_u32(os, static_cast<std::uint32_t>(p.num_tasks));
  detail::put_u32(os, 4);
  for (const nn::DenseLayer* l : {&p.enc1, &p.enc2, &p.policy_head, &p.value_head}) {
    detail::put_u32(os, static_cast<std::uint32_t>(l->in()));
    detail::put_u32(os, static_cast<std::uint32_t>(l->out()));
  }
  detail::put_array(os, p);
  detail::put_u64(os, static_cast<std::uint64_t>(ck.adam.step));
  detail::put_f64(os, ck.adam.beta1);
  detail::put_f64(os, ck.adam.beta2);
  detail::put_f64(os, ck.adam.eps);
  detail::put_array(os, ck.adam.m);
  detail::put_array(os, ck.adam.v);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.popart.num_tasks()));
  detail::put_f64(os, ck.popart.beta);
  for (int i = 0; i < ck.popart.num_tasks(); ++i) {
    detail::put_f64(os, ck.popart.mu[i]);
    detail::put_f64(os, ck.popart.nu[i]);
    detail::put_f64(os, ck.popart.sigma[i]);
    const char seeded = ck.popart.seeded[i] ? 1 : 0;
    os.write(&seeded, 1);
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw std::runtime_error("not an auxdistill checkpoint");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const int obs_dim = static_cast<int>(detail::get_u32(is));
  const int num_tasks = static_cast<int>(detail::get_u32(is));
  const std::uint32_t layers = detail::get_u32(is);
  if (layers != 4) throw std::runtime_error("unexpected layer count");
  std::array<std::pair<int, int>, 4> dims{};
  for (auto& d : dims) {
    d.first = static_cast<int>(detail::get_u32(is));
    d.second = static_cast<int>(detail::get_u32(is));
  }
  const int hidden = dims[0].second;
  if (dims[0].first != obs_dim || dims[1] != std::pair{hidden, hidden} || dims[2] != std::pair{hidden, nn::kNumActions} ||
      dims[3] != std::pair{hidden, num_tasks})
    throw std::runtime_error("checkpoint layer dimensions are inconsistent");
  Checkpoint ck;
  ck.params = nn::PolicyParams(obs_dim, num_tasks, hidden);
  detail::get_array(is, ck.params);
  ck.adam = nn::AdamState(ck.params);
  ck.adam.step = static_cast<std::int64_t>(detail::get_u64(is));
  ck.adam.beta1 = detail::get_f64(is);
  ck.adam.beta2 = detail::get_f64(is);
  ck.adam.eps = detail::get_f64(is);
  detail::get_array(is, ck.adam.m);
  detail::get_array(is, ck.adam.v);
  const int pt = static_cast<int>(detail::get_u32(is));
  ck.popart = PopArtState(pt);
  ck.popart.beta = detail::get_f64(is);
  for (int i = 0; i < pt; ++i) {
    ck.popart.mu[i] = detail::get_f64(is);
    ck.popart.nu[i] = detail::get_f64(is);
    ck.popart.sigma[i] = detail::get_f64(is);
    char seeded = 0;
    if (!is.read(&seeded, 1)) throw std::runtime_error("checkpoint truncated");
    ck.popart.seeded[i] = seeded != 0;
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace auxdistill
