#include "airode/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>
#include <random>

#include "airode/ris.hpp"

namespace airode::data {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) throw IdxError("truncated header", off);
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 2051) throw IdxError("bad image magic " + std::to_string(magic) + " (expected 2051)", 0);
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  if (out.rows == 0) throw IdxError("zero row count", 8);
  if (out.cols == 0) throw IdxError("zero column count", 12);
  const std::size_t need = out.count * out.rows * out.cols;
  if (bytes.size() - 16 < need) throw IdxError("pixel data shorter than header declares", bytes.size());
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 2049) throw IdxError("bad label magic " + std::to_string(magic) + " (expected 2049)", 0);
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) throw IdxError("label data shorter than header declares", bytes.size());
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

IdxImages read_idx_images(const std::filesystem::path& path) { return parse_idx_images(slurp(path)); }
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) { return parse_idx_labels(slurp(path)); }

Encoding parse_encoding(const std::string& name) {
  if (name == "amplitude_phase") return Encoding::AmplitudePhase;
  if (name == "real") return Encoding::Real;
  throw std::invalid_argument("unknown pixel encoding '" + name + "'");
}

cplx encode_pixel(double p, Encoding enc) {
  if (enc == Encoding::Real) return {p, 0.0};
  return std::polar(p, std::numbers::pi * p);
}

std::vector<std::size_t> stratified_pick(const std::vector<std::size_t>& labels, std::span<const std::size_t> pool,
                                         std::size_t count, std::size_t classes, std::uint64_t seed) {
  std::vector<std::size_t> shuffled(pool.begin(), pool.end());
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<std::size_t> quota(classes, count / classes);
  for (std::size_t q = 0; q < count % classes; ++q) ++quota[q];
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i : shuffled) {
    const std::size_t c = labels.at(i);
    if (c >= classes) throw std::invalid_argument("label " + std::to_string(c) + " outside class range");
    if (quota[c] > 0) {
      --quota[c];
      out.push_back(i);
    }
  }
  for (std::size_t q = 0; q < classes; ++q)
    if (quota[q] > 0) throw std::invalid_argument("not enough samples of class " + std::to_string(q) + " to stratify");
  std::sort(out.begin(), out.end());
  return out;
}

Dataset synthesize(const SyntheticParams& p) {
  if (p.classes == 0 || p.image_size == 0) throw std::invalid_argument("synthetic dataset needs classes and size");
  if (p.train == 0 || p.test == 0 || p.validation == 0) throw std::invalid_argument("synthetic split sizes must be positive");
  const double A = static_cast<double>(p.image_size);

  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::mt19937_64 trng(ris::split_seed(p.seed, 0));
  std::uniform_real_distribution<double> centre(0.2 * A, 0.8 * A), width(0.08 * A, 0.2 * A), amp(0.5, 1.0);
  auto draw = [&]() {
    const double cx = centre(trng), cy = centre(trng), s = width(trng), a = amp(trng);
    return Blob{cx, cy, s, a};
  };
  std::vector<Blob> shared;
  for (std::size_t b = 0; b < p.shared_blobs; ++b) shared.push_back(draw());
  std::vector<std::vector<Blob>> templates(p.classes, shared);
  for (auto& t : templates)
    for (std::size_t b = 0; b < p.blobs_per_class; ++b) t.push_back(draw());
  auto render = [&](const std::vector<Blob>& t, double dx, double dy, std::size_t r, std::size_t c) {
    double v = 0.0;
    for (const auto& b : t) {
      const double ex = (static_cast<double>(c) - b.cx - dx) / b.sigma;
      const double ey = (static_cast<double>(r) - b.cy - dy) / b.sigma;
      v += b.amp * std::exp(-0.5 * (ex * ex + ey * ey));
    }
    return v;
  };
  std::vector<double> peak(p.classes, 0.0);
  for (std::size_t q = 0; q < p.classes; ++q)
    for (std::size_t r = 0; r < p.image_size; ++r)
      for (std::size_t c = 0; c < p.image_size; ++c) peak[q] = std::max(peak[q], render(templates[q], 0, 0, r, c));

  auto make_split = [&](std::size_t count, std::uint64_t stream) {
    train::LabeledImages out;
    out.images = ComplexTensor({count, p.image_size, p.image_size});
    std::mt19937_64 rng(ris::split_seed(p.seed, stream));
    std::uniform_real_distribution<double> shift(-p.jitter, p.jitter), gain(1.0 - p.amplitude, 1.0 + p.amplitude);
    std::normal_distribution<double> noise(0.0, p.pixel_noise);
    std::vector<std::size_t> labels(count);
    for (std::size_t n = 0; n < count; ++n) labels[n] = n % p.classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    const std::size_t px = p.image_size * p.image_size;
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t q = labels[n];
      const double dx = shift(rng), dy = shift(rng), g = gain(rng);
      for (std::size_t r = 0; r < p.image_size; ++r)
        for (std::size_t c = 0; c < p.image_size; ++c) {
          const double e = noise(rng);
          const double v = std::clamp(g * render(templates[q], dx, dy, r, c) / peak[q] + e, 0.0, 1.0);
          out.images[n * px + r * p.image_size + c] = encode_pixel(v, p.encoding);
        }
    }
    out.labels = std::move(labels);
    return out;
  };

  Dataset d;
  d.classes = p.classes;
  d.image_size = p.image_size;
  d.source = "synthetic";
  d.seed = p.seed;
  d.train = make_split(p.train, 1);
  d.validation = make_split(p.validation, 2);
  d.test = make_split(p.test, 3);
  return d;
}

namespace {

train::LabeledImages gather(const IdxImages& img, const std::vector<std::uint8_t>& labels,
                            const std::vector<std::size_t>& idx, bool downsample, Encoding enc) {
  const std::size_t f = downsample ? 2 : 1;
  if (img.rows % f != 0 || img.cols % f != 0) throw std::invalid_argument("image size not divisible by 2 for desk scale");
  const std::size_t R = img.rows / f, Cc = img.cols / f, src_px = img.rows * img.cols;
  if (R != Cc) throw std::invalid_argument("images must be square");
  train::LabeledImages out;
  out.images = ComplexTensor({idx.size(), R, Cc});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const std::uint8_t* base = img.pixels.data() + idx[n] * src_px;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < Cc; ++c) {
        double acc = 0.0;
        for (std::size_t a = 0; a < f; ++a)
          for (std::size_t b = 0; b < f; ++b) acc += base[(r * f + a) * img.cols + c * f + b];
        const double p = acc / static_cast<double>(f * f) / 255.0;
        out.images[(n * R + r) * Cc + c] = encode_pixel(p, enc);
      }
    out.labels.push_back(labels[idx[n]]);
  }
  return out;
}

}  // namespace

Dataset load_idx(const IdxSource& src) {
  const IdxImages train_img = read_idx_images(src.train_images);
  const auto train_lab = read_idx_labels(src.train_labels);
  if (train_lab.size() != train_img.count) throw std::invalid_argument("training images and labels differ in count");
  std::vector<std::size_t> labels(train_lab.begin(), train_lab.end());

  Dataset d;
  d.classes = src.classes;
  d.seed = src.seed;
  d.source = "idx:" + src.train_images.string();
  d.image_size = src.desk_scale ? train_img.rows / 2 : train_img.rows;

  std::vector<std::size_t> all(train_img.count);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> train_idx, val_idx;
  if (src.desk_scale) {
    train_idx = stratified_pick(labels, all, src.train, src.classes, ris::split_seed(src.seed, 1));
    std::vector<std::size_t> rest;
    std::set_difference(all.begin(), all.end(), train_idx.begin(), train_idx.end(), std::back_inserter(rest));
    val_idx = stratified_pick(labels, rest, src.validation, src.classes, ris::split_seed(src.seed, 2));
  } else {
    if (train_img.count < 60000) throw std::invalid_argument("full scale expects 60,000 training images");
    std::mt19937_64 rng(ris::split_seed(src.seed, 1));
    std::vector<std::size_t> perm = all;
    std::shuffle(perm.begin(), perm.end(), rng);
    train_idx.assign(perm.begin(), perm.begin() + 54000);
    val_idx.assign(perm.begin() + 54000, perm.begin() + 60000);
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
  }
  d.train = gather(train_img, train_lab, train_idx, src.desk_scale, src.encoding);
  d.validation = gather(train_img, train_lab, val_idx, src.desk_scale, src.encoding);

  if (!src.test_images.empty()) {
    const IdxImages test_img = read_idx_images(src.test_images);
    const auto test_lab = read_idx_labels(src.test_labels);
    if (test_lab.size() != test_img.count) throw std::invalid_argument("test images and labels differ in count");
    std::vector<std::size_t> tl(test_lab.begin(), test_lab.end()), pool(test_img.count);
    std::iota(pool.begin(), pool.end(), 0);
    const auto idx = src.desk_scale ? stratified_pick(tl, pool, src.test, src.classes, ris::split_seed(src.seed, 3)) : pool;
    d.test = gather(test_img, test_lab, idx, src.desk_scale, src.encoding);
  } else {
    std::vector<std::size_t> used = train_idx, rest;
    used.insert(used.end(), val_idx.begin(), val_idx.end());
    std::sort(used.begin(), used.end());
    std::set_difference(all.begin(), all.end(), used.begin(), used.end(), std::back_inserter(rest));
    std::sort(rest.begin(), rest.end());
    if (rest.empty()) throw std::invalid_argument("no samples left for a test split");
    const auto idx = src.desk_scale ? stratified_pick(labels, rest, src.test, src.classes, ris::split_seed(src.seed, 3))
                                    : rest;
    d.test = gather(train_img, train_lab, idx, src.desk_scale, src.encoding);
  }
  return d;
}

}  // namespace airode::data
