#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "capri/model.hpp"
#include "capri/sampling.hpp"

namespace capri::checkpoint {

// Binary checkpoint: fit configuration, training progress, all parameter
// matrices, the loss trace, and the training query set (kept so that tree
// extraction can re-validate pruning against the original training points).
// Everything is written in a fixed order with little-endian scalars, so a
// fixed model state always produces identical bytes.

inline constexpr char kFormatTag[9] = "CAPC0001";

struct Checkpoint {
  model::FitConfig config;
  model::ModelState state;
  sampling::QuerySet queries;
};

namespace detail {

inline void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_i64(std::ofstream& out, std::int64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  }
  put_bytes(out, b, 8);
}

inline void put_u64(std::ofstream& out, std::uint64_t v) {
  put_i64(out, static_cast<std::int64_t>(v));
}

inline void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline void put_u8(std::ofstream& out, std::uint8_t v) {
  put_bytes(out, &v, 1);
}

inline void put_mat(std::ofstream& out, const Mat& m) {
  put_i64(out, m.rows());
  put_i64(out, m.cols());
  for (Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
}

struct Reader {
  std::ifstream in;
  std::string path;

  void take(void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw InputError("truncated checkpoint (" + std::string(what) +
                       ") in " + path);
    }
  }

  std::int64_t i64(const char* what) {
    unsigned char b[8];
    take(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<std::int64_t>(v);
  }

  std::uint64_t u64(const char* what) {
    return static_cast<std::uint64_t>(i64(what));
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    take(&v, 1, what);
    return v;
  }

  Mat mat(const char* what) {
    const std::int64_t rows = i64(what);
    const std::int64_t cols = i64(what);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t(1) << 32)) {
      throw InputError("implausible matrix shape in checkpoint (" +
                       std::string(what) + ") in " + path);
    }
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = f64(what);
    return m;
  }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write checkpoint file: " + path.string());
  }
  using namespace detail;
  put_bytes(out, kFormatTag, 8);

  const model::FitConfig& c = ck.config;
  put_i64(out, c.primitive_count);
  put_i64(out, c.convex_count);
  put_i64(out, c.latent_size);
  put_i64(out, c.hidden_size);
  put_i64(out, c.iterations_per_stage);
  put_i64(out, c.minibatch_size);
  put_f64(out, c.learning_rate);
  put_f64(out, c.quantize_eta);
  put_f64(out, c.inside_weight);
  put_f64(out, c.outside_weight);
  put_f64(out, c.difference_margin);
  put_f64(out, c.gradient_clip);
  put_u64(out, c.seed);
  put_u8(out, c.precision == model::Precision::kFloat32 ? 1 : 0);
  put_u8(out, c.straight_through ? 1 : 0);

  const model::ModelState& s = ck.state;
  put_i64(out, s.stage);
  put_i64(out, s.iteration);
  for (const Mat* m : {&s.latent, &s.w1, &s.b1, &s.w2, &s.b2, &s.t_left,
                       &s.t_right, &s.w_left, &s.w_right}) {
    put_mat(out, *m);
  }
  put_i64(out, static_cast<std::int64_t>(s.trace.size()));
  for (const auto& r : s.trace) {
    put_i64(out, r.stage);
    put_i64(out, r.iteration);
    put_f64(out, r.total);
    put_f64(out, r.reconstruction);
    put_f64(out, r.selection);
    put_f64(out, r.weight);
  }

  put_u8(out, ck.queries.provenance == sampling::Provenance::kPointCloud ? 1
                                                                         : 0);
  put_mat(out, ck.queries.points);
  put_mat(out, ck.queries.labels);
  if (!out) {
    throw InputError("failed writing checkpoint file: " + path.string());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::Reader r{std::ifstream(path, std::ios::binary), path.string()};
  if (!r.in) {
    throw InputError("cannot open checkpoint file: " + path.string());
  }
  char tag[8];
  r.take(tag, 8, "format tag");
  if (std::memcmp(tag, kFormatTag, 8) != 0) {
    throw InputError("bad checkpoint format tag in " + path.string() +
                     ": expected \"CAPC0001\"");
  }

  Checkpoint ck;
  model::FitConfig& c = ck.config;
  c.primitive_count = r.i64("primitive count");
  c.convex_count = r.i64("convex count");
  c.latent_size = r.i64("latent size");
  c.hidden_size = r.i64("hidden size");
  c.iterations_per_stage = r.i64("iterations");
  c.minibatch_size = r.i64("minibatch");
  c.learning_rate = r.f64("learning rate");
  c.quantize_eta = r.f64("eta");
  c.inside_weight = r.f64("inside weight");
  c.outside_weight = r.f64("outside weight");
  c.difference_margin = r.f64("margin");
  c.gradient_clip = r.f64("gradient clip");
  c.seed = r.u64("seed");
  c.precision = r.u8("precision") != 0 ? model::Precision::kFloat32
                                       : model::Precision::kFloat64;
  c.straight_through = r.u8("straight through") != 0;

  model::ModelState& s = ck.state;
  s.stage = static_cast<int>(r.i64("stage"));
  s.iteration = r.i64("iteration");
  s.latent = r.mat("latent");
  s.w1 = r.mat("w1");
  s.b1 = r.mat("b1");
  s.w2 = r.mat("w2");
  s.b2 = r.mat("b2");
  s.t_left = r.mat("t_left");
  s.t_right = r.mat("t_right");
  s.w_left = r.mat("w_left");
  s.w_right = r.mat("w_right");
  const std::int64_t trace_len = r.i64("trace length");
  if (trace_len < 0) {
    throw InputError("negative trace length in " + path.string());
  }
  s.trace.resize(static_cast<std::size_t>(trace_len));
  for (auto& rec : s.trace) {
    rec.stage = static_cast<int>(r.i64("trace stage"));
    rec.iteration = r.i64("trace iteration");
    rec.total = r.f64("trace total");
    rec.reconstruction = r.f64("trace reconstruction");
    rec.selection = r.f64("trace selection");
    rec.weight = r.f64("trace weight");
  }

  ck.queries.provenance = r.u8("provenance") != 0
                              ? sampling::Provenance::kPointCloud
                              : sampling::Provenance::kVoxel;
  ck.queries.points = r.mat("query points");
  ck.queries.labels = r.mat("query labels");
  return ck;
}

}  // namespace capri::checkpoint
