#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/scorer.hpp"
#include "dfw/text.hpp"

namespace dfw {

// Checkpoint layout (all little-endian):
//   "DFWPOLY\0"  u32 version
//   config:  u32 embed_dim, u32 num_codes, u32 max_context_tokens, u32 batch_size,
//            u32 history_negatives, u32 epochs, u64 seed, f64 learning_rate,
//            f64 clip_norm, f64 init_scale
//   vocab:   u32 size, u64 num_documents, size x (u32 len, bytes, u64 df)
//   params:  f32[V*d] embeddings row-major, f32[N*d] codes row-major
inline constexpr std::array<char, 8> checkpoint_magic = {'D', 'F', 'W', 'P', 'O', 'L', 'Y', '\0'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }

template <class U>
U get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw error("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<U>(v);
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& os, const poly_lite_model<T>& m) {
  const auto& c = m.config();
  os.write(checkpoint_magic.data(), checkpoint_magic.size());
  detail::put_le<std::uint32_t>(os, checkpoint_version);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.embed_dim));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_codes));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.max_context_tokens));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.batch_size));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.history_negatives));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.epochs));
  detail::put_le<std::uint64_t>(os, c.seed);
  detail::put_f64(os, c.learning_rate);
  detail::put_f64(os, c.clip_norm);
  detail::put_f64(os, c.init_scale);

  const auto& v = m.vocab();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.size()));
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(v.num_documents()));
  for (std::int32_t i = 0; i < v.size(); ++i) {
    const auto& tok = v.token(i);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tok.size()));
    os.write(tok.data(), static_cast<std::streamsize>(tok.size()));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(v.document_frequency()[static_cast<std::size_t>(i)]));
  }
  for (auto x : m.embeddings()) detail::put_f32(os, static_cast<float>(x));
  for (auto x : m.codes()) detail::put_f32(os, static_cast<float>(x));
  if (!os) throw error("checkpoint write failed");
}

template <class T = float>
poly_lite_model<T> load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != checkpoint_magic) throw error("not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != checkpoint_version) throw error("unsupported checkpoint version " + std::to_string(version));
  poly_lite_config c;
  c.embed_dim = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.num_codes = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.max_context_tokens = detail::get_le<std::uint32_t>(is);
  c.batch_size = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.history_negatives = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.epochs = static_cast<int>(detail::get_le<std::uint32_t>(is));
  c.seed = detail::get_le<std::uint64_t>(is);
  c.learning_rate = detail::get_f64(is);
  c.clip_norm = detail::get_f64(is);
  c.init_scale = detail::get_f64(is);
  c.validate();

  vocabulary v;
  const auto size = detail::get_le<std::uint32_t>(is);
  v.set_num_documents(static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is)));
  if (size < static_cast<std::uint32_t>(num_reserved) || size > (1u << 26)) throw error("checkpoint vocab size invalid");
  for (std::uint32_t i = 0; i < size; ++i) {
    const auto len = detail::get_le<std::uint32_t>(is);
    if (len > (1u << 20)) throw error("checkpoint token too long");
    std::string tok(len, '\0');
    is.read(tok.data(), len);
    if (!is) throw error("checkpoint truncated");
    const auto df = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is));
    if (i < static_cast<std::uint32_t>(num_reserved)) {
      if (tok != v.token(static_cast<std::int32_t>(i))) throw error("checkpoint reserved tokens mismatch");
      continue;
    }
    if (v.add_token(tok, df) != static_cast<std::int32_t>(i)) throw error("checkpoint duplicate token");
  }
  v.finalize();

  auto m = poly_lite_model<T>::zeros(c, std::move(v));
  for (auto& x : m.embeddings()) x = static_cast<T>(detail::get_f32(is));
  for (auto& x : m.codes()) x = static_cast<T>(detail::get_f32(is));
  if (!m.all_finite()) throw error("checkpoint holds non-finite parameters");
  return m;
}

template <class T>
void save_checkpoint(const std::string& path, const poly_lite_model<T>& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw error("cannot write checkpoint '" + path + "'");
  save_checkpoint(os, m);
}

template <class T = float>
poly_lite_model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw error("cannot open checkpoint '" + path + "'");
  return load_checkpoint<T>(is);
}

}  // namespace dfw
