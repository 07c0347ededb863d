#include "ipdfer/factorgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "ipdfer/errors.hpp"
#include "ipdfer/rng.hpp"

namespace ipdfer::data {

namespace {

constexpr std::uint64_t kIdentityStream = 0x1dfa0e5eedull;
constexpr std::uint64_t kExpressionStream = 0xe4950c0deull;

// Smooth 0..1 ramp; z <= 0 -> 0, z >= 1 -> 1, cubic in between.
double sstep(double z) {
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return 1.0;
  return z * z * (3.0 - 2.0 * z);
}

// Elliptical coverage mask from implicit value e = (dx/rx)^2 + (dy/ry)^2,
// softened over `edge` in implicit units.
double ellipse_mask(double dx, double dy, double rx, double ry, double edge) {
  const double ex = dx / rx;
  const double ey = dy / ry;
  const double e = ex * ex + ey * ey;
  return sstep((1.0 - e) / edge);
}

float f32(double v) { return static_cast<float>(v); }

}  // namespace

std::array<double, 4> identity_params_for(int identity_id) {
  Rng rng(Rng::mix(kIdentityStream, static_cast<std::uint64_t>(identity_id)));
  std::array<double, 4> p{};
  p[0] = rng.uniform(0.70, 0.95);  // head aspect ratio
  p[1] = rng.uniform(0.30, 0.45);  // eye spacing
  p[2] = rng.uniform(0.85, 1.20);  // feature scale
  p[3] = rng.uniform(0.55, 0.90);  // base intensity
  return p;
}

FactorTuple make_factors(int identity_id, double yaw_deg, int expression_id) {
  FactorTuple f;
  f.identity_id = identity_id;
  f.identity_params = identity_params_for(identity_id);
  f.yaw_deg = yaw_deg;
  f.expression_id = expression_id;
  return f;
}

int pose_bucket(double yaw_deg) {
  if (yaw_deg < 0.0 || std::isnan(yaw_deg))
    throw std::invalid_argument("pose_bucket: yaw must be non-negative, got " + std::to_string(yaw_deg));
  if (yaw_deg < 10.0) return 0;
  if (yaw_deg < 20.0) return 1;
  if (yaw_deg < 30.0) return 2;
  if (yaw_deg < 40.0) return 3;
  return 4;
}

std::array<double, 3> expression_shape_params(int expression_id, int k_expressions) {
  if (expression_id < 0 || expression_id >= k_expressions)
    throw std::invalid_argument("expression id " + std::to_string(expression_id) + " out of range for K=" +
                                std::to_string(k_expressions));
  switch (expression_id) {
    case 0: return {0.0, 0.10, 1.0};    // neutral: flat thin mouth
    case 1: return {1.0, 0.10, 1.0};    // corners up
    case 2: return {0.0, 0.30, 1.45};   // open mouth, wide eyes
    case 3: return {-1.0, 0.10, 0.50};  // corners down, narrowed eyes
    default: {
      Rng rng(Rng::mix(kExpressionStream, static_cast<std::uint64_t>(expression_id)));
      return {rng.uniform(-1.0, 1.0), rng.uniform(0.08, 0.30), rng.uniform(0.5, 1.45)};
    }
  }
}

double expression_amplitude_for(int identity_id) {
  Rng rng(Rng::mix(kIdentityStream ^ 0xa3b1u, static_cast<std::uint64_t>(identity_id)));
  return rng.uniform(0.70, 1.30);
}

Tensor render(const FactorTuple& f, const ImageShape& shape, int k_expressions) {
  if (f.yaw_deg < 0.0 || f.yaw_deg > 50.0 || std::isnan(f.yaw_deg))
    throw std::invalid_argument("render: yaw " + std::to_string(f.yaw_deg) + " outside [0, 50]");
  if (shape.height < 8 || shape.width < 8) throw std::invalid_argument("render: image too small");
  if (shape.channels != 1 && shape.channels != 3) throw std::invalid_argument("render: channels must be 1 or 3");
  const auto base_shape = expression_shape_params(f.expression_id, k_expressions);
  // How strongly an expression shows varies per person: the deviation from
  // the neutral configuration is scaled by an identity-keyed amplitude.
  // Neutral itself (class 0's parameters) is amplitude-independent.
  const double amp = expression_amplitude_for(f.identity_id);
  const double curve = base_shape[0] * amp;
  const double opening = 0.10 + (base_shape[1] - 0.10) * amp;
  const double eye_open = 1.0 + (base_shape[2] - 1.0) * amp;

  const double aspect = f.identity_params[0];
  const double eye_dx = f.identity_params[1];
  const double fscale = f.identity_params[2];
  const double base = f.identity_params[3];

  // Left/right turn direction keyed on identity parity; the bucket label only
  // sees |yaw|.
  const double sign = (f.identity_id % 2 == 0) ? 1.0 : -1.0;
  const double t = sign * (f.yaw_deg / 50.0);
  const double pan = 0.6 * t;
  const double sp = std::sin(pan);
  const double cp = std::cos(pan);

  const double ry = 0.84;
  const double rx = 0.84 * aspect * (1.0 - 0.18 * (t * t));
  const double cx = 0.16 * t;

  // Features sit on a cylinder of radius rx; a feature at frontal offset x0
  // lands at cx + rx*sin(asin(x0) + pan). The angle sum is expanded so that
  // pan == 0 reproduces +/-x0 bit-exactly (frontal mirror symmetry).
  const double se = eye_dx;
  const double ce = std::sqrt(1.0 - eye_dx * eye_dx);
  const double eye_xr = cx + rx * (se * cp + ce * sp);
  const double eye_xl = cx + rx * (-(se * cp) + ce * sp);
  const double eye_wr = std::max(ce * cp - se * sp, 0.15);
  const double eye_wl = std::max(ce * cp + se * sp, 0.15);
  const double eye_y = -0.26 * ry;
  const double eye_rx_r = 0.16 * fscale * eye_wr;
  const double eye_rx_l = 0.16 * fscale * eye_wl;
  const double eye_ry = 0.13 * fscale * eye_open;

  const double nose_x = cx + 0.85 * rx * sp;
  const double nose_w = 0.06 * fscale;
  const double mouth_x = cx + 0.85 * rx * sp;
  const double mouth_w = 0.42 * rx * fscale;
  const double mouth_y = 0.42 * ry;
  const double mouth_h = 0.55 * opening * fscale;
  const double bg = 0.05;

  Tensor img({shape.channels, shape.height, shape.width});
  for (int row = 0; row < shape.height; ++row) {
    const double v = (row + 0.5 - shape.height / 2.0) * (2.0 / shape.height);
    for (int col = 0; col < shape.width; ++col) {
      const double u = (col + 0.5 - shape.width / 2.0) * (2.0 / shape.width);

      const double m_head = ellipse_mask(u - cx, v, rx, ry, 0.10);
      const double shade = 1.0 + (-0.22) * t * ((u - cx) / rx);

      const double m_eye_r = ellipse_mask(u - eye_xr, v - eye_y, eye_rx_r, eye_ry, 0.45);
      const double m_eye_l = ellipse_mask(u - eye_xl, v - eye_y, eye_rx_l, eye_ry, 0.45);

      const double nose_v = sstep((0.14 - std::abs(v - 0.02)) / 0.10);
      const double nose_u = sstep((1.0 - ((u - nose_x) / nose_w) * ((u - nose_x) / nose_w)) / 0.6);
      const double m_nose = nose_u * nose_v;

      const double mu = (u - mouth_x) / mouth_w;
      const double mouth_vc = mouth_y - 0.14 * curve * (mu * mu);
      const double mdy = (v - mouth_vc) / mouth_h;
      const double m_mouth = sstep((1.0 - mu * mu) / 0.30) * sstep((1.0 - mdy * mdy) / 0.50);

      const double dark = ((m_eye_r + m_eye_l) * 0.52 + m_nose * 0.20 + m_mouth * 0.60) * base;
      double pix = bg * (1.0 - m_head) + m_head * (base * shade) - m_head * dark;
      pix = std::min(1.0, std::max(0.0, pix));

      const std::int64_t at = static_cast<std::int64_t>(row) * shape.width + col;
      const std::int64_t plane = static_cast<std::int64_t>(shape.height) * shape.width;
      img[at] = pix;
      if (shape.channels == 3) {
        img[plane + at] = std::min(1.0, std::max(0.0, pix * 0.92));
        img[2 * plane + at] = std::min(1.0, std::max(0.0, pix * 0.84));
      }
    }
  }
  return img;
}

std::vector<int> Dataset::train_indices(int fold) const {
  if (fold < 0 || fold >= config.n_folds) throw std::invalid_argument("fold out of range");
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].fold != fold) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::test_indices(int fold) const {
  if (fold < 0 || fold >= config.n_folds) throw std::invalid_argument("fold out of range");
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].fold == fold) out.push_back(static_cast<int>(i));
  return out;
}

namespace {
std::vector<int> identities_where(const Dataset& ds, int fold, bool in_fold) {
  std::set<int> ids;
  for (const auto& s : ds.samples)
    if ((s.fold == fold) == in_fold) ids.insert(s.factors.identity_id);
  return {ids.begin(), ids.end()};
}
}  // namespace

std::vector<int> Dataset::train_identities(int fold) const { return identities_where(*this, fold, false); }
std::vector<int> Dataset::test_identities(int fold) const { return identities_where(*this, fold, true); }

Dataset build_dataset(const GeneratorConfig& config) {
  if (config.n_identities < 2) throw ConfigError("build_dataset: need at least 2 identities");
  if (config.n_folds < 1) throw ConfigError("build_dataset: need at least 1 fold");
  if (config.n_identities < config.n_folds)
    throw ConfigError("build_dataset: fewer identities (" + std::to_string(config.n_identities) +
                      ") than folds (" + std::to_string(config.n_folds) + ")");
  if (config.k_expressions < 1) throw ConfigError("build_dataset: need at least 1 expression class");
  if (config.yaws.empty()) throw ConfigError("build_dataset: empty yaw grid");
  for (double y : config.yaws)
    if (y < 0.0 || y > 50.0) throw ConfigError("build_dataset: yaw " + std::to_string(y) + " outside [0, 50]");

  Dataset ds;
  ds.config = config;
  ds.samples.reserve(static_cast<std::size_t>(config.n_identities) * config.yaws.size() *
                     static_cast<std::size_t>(config.k_expressions));
  for (int id = 0; id < config.n_identities; ++id) {
    for (double yaw : config.yaws) {
      for (int e = 0; e < config.k_expressions; ++e) {
        LabeledSample s;
        s.factors = make_factors(id, yaw, e);
        // Stored values round-trip through the 32-bit on-disk precision so an
        // in-memory dataset and its file are interchangeable.
        s.factors.yaw_deg = static_cast<double>(f32(s.factors.yaw_deg));
        for (auto& p : s.factors.identity_params) p = static_cast<double>(f32(p));
        s.image = render(s.factors, config.shape, config.k_expressions);
        for (std::int64_t i = 0; i < s.image.size(); ++i)
          s.image[i] = static_cast<double>(f32(s.image[i]));
        s.y_e = e;
        s.y_p = pose_bucket(s.factors.yaw_deg);
        s.fold = id % config.n_folds;
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

namespace {

constexpr std::uint32_t kDatasetMagic = 0x53445049;  // 'IPDS'
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kGeneratorVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("dataset: truncated file");
  return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  put<std::uint32_t>(os, kDatasetMagic);
  put<std::uint32_t>(os, kFormatVersion);
  put<std::uint32_t>(os, kGeneratorVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.shape.height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.shape.width));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.shape.channels));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.k_expressions));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(kPoseBuckets));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.n_identities));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.n_folds));
  put<std::uint64_t>(os, ds.config.seed);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.config.yaws.size()));
  for (double y : ds.config.yaws) put<float>(os, f32(y));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    put<std::int32_t>(os, s.factors.identity_id);
    put<float>(os, f32(s.factors.yaw_deg));
    put<std::int32_t>(os, s.factors.expression_id);
    for (double p : s.factors.identity_params) put<float>(os, f32(p));
    put<std::int32_t>(os, s.y_e);
    put<std::int32_t>(os, s.y_p);
    put<std::int32_t>(os, s.fold);
    for (std::int64_t i = 0; i < s.image.size(); ++i) put<float>(os, f32(s.image[i]));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset: " + path);
  if (get<std::uint32_t>(is) != kDatasetMagic) throw FormatError("dataset: bad magic in " + path);
  if (get<std::uint32_t>(is) != kFormatVersion) throw FormatError("dataset: unsupported format version");
  if (get<std::uint32_t>(is) != kGeneratorVersion) throw FormatError("dataset: unsupported generator version");
  Dataset ds;
  ds.config.shape.height = static_cast<int>(get<std::uint32_t>(is));
  ds.config.shape.width = static_cast<int>(get<std::uint32_t>(is));
  ds.config.shape.channels = static_cast<int>(get<std::uint32_t>(is));
  ds.config.k_expressions = static_cast<int>(get<std::uint32_t>(is));
  if (get<std::uint32_t>(is) != kPoseBuckets) throw FormatError("dataset: unexpected pose bucket count");
  ds.config.n_identities = static_cast<int>(get<std::uint32_t>(is));
  ds.config.n_folds = static_cast<int>(get<std::uint32_t>(is));
  ds.config.seed = get<std::uint64_t>(is);
  const auto n_yaws = get<std::uint32_t>(is);
  ds.config.yaws.resize(n_yaws);
  for (auto& y : ds.config.yaws) y = static_cast<double>(get<float>(is));
  const auto n_samples = get<std::uint64_t>(is);
  const std::int64_t pix = static_cast<std::int64_t>(ds.config.shape.channels) * ds.config.shape.height * ds.config.shape.width;
  ds.samples.resize(n_samples);
  for (auto& s : ds.samples) {
    s.factors.identity_id = get<std::int32_t>(is);
    s.factors.yaw_deg = static_cast<double>(get<float>(is));
    s.factors.expression_id = get<std::int32_t>(is);
    for (auto& p : s.factors.identity_params) p = static_cast<double>(get<float>(is));
    s.y_e = get<std::int32_t>(is);
    s.y_p = get<std::int32_t>(is);
    s.fold = get<std::int32_t>(is);
    s.image = Tensor({ds.config.shape.channels, ds.config.shape.height, ds.config.shape.width});
    for (std::int64_t i = 0; i < pix; ++i) s.image[i] = static_cast<double>(get<float>(is));
  }
  return ds;
}

std::array<int, kPoseBuckets> bucket_histogram(const Dataset& ds) {
  std::array<int, kPoseBuckets> hist{};
  for (const auto& s : ds.samples) hist[static_cast<std::size_t>(s.y_p)]++;
  return hist;
}

void write_image(const Tensor& image, const std::string& path) {
  if (image.rank() != 3) throw std::invalid_argument("write_image: expects (C,H,W)");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw std::invalid_argument("write_image: channels must be 1 or 3");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  auto byte = [](double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::lround(clamped * 255.0));
  };
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col)
      for (int ch = 0; ch < c; ++ch) {
        unsigned char b = byte(image[(static_cast<std::int64_t>(ch) * h + row) * w + col]);
        os.write(reinterpret_cast<const char*>(&b), 1);
      }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor stack_images(const Dataset& ds, const std::vector<int>& indices) {
  const auto& sh = ds.config.shape;
  Tensor out({static_cast<int>(indices.size()), sh.channels, sh.height, sh.width});
  const std::int64_t m = static_cast<std::int64_t>(sh.channels) * sh.height * sh.width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = ds.samples[static_cast<std::size_t>(indices[i])].image;
    std::copy(img.data(), img.data() + m, out.data() + static_cast<std::int64_t>(i) * m);
  }
  return out;
}

}  // namespace ipdfer::data
