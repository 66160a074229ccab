#include "lplab/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "lplab/parallel.hpp"
#include "lplab/resample.hpp"
#include "lplab/rng.hpp"

namespace fs = std::filesystem;

namespace lplab {

void DataSpec::validate() const {
  if (count <= 0) throw ConfigError("data spec: count must be positive");
  if (resolution <= 0 || resolution % 4 != 0)
    throw ConfigError("data spec: resolution must be a positive multiple of the autoencoder factor 4");
  if (classes < 1 || classes > 4) throw ConfigError("data spec: classes must lie in [1,4]");
  if (texture_freq_min < 0.0 || texture_freq_max < texture_freq_min)
    throw ConfigError("data spec: invalid texture frequency range");
  if (texture_freq_max > resolution / 2.0)
    throw ConfigError("data spec: texture_freq_max exceeds Nyquist (resolution/2)");
  if (texture_amplitude < 0.0) throw ConfigError("data spec: texture_amplitude must be >= 0");
}

namespace {

constexpr int kSuper = 4;  // supersampling factor for anti-aliased rasterization

struct ShapeParams {
  int kind = 0;  // 0 circle, 1 square, 2 triangle, 3 stripes
  double cx = 0.5, cy = 0.5, size = 0.3, angle = 0.0;
  int stripe_mx = 3, stripe_my = 0;  // integer wave vector, keeps the DFT leakage-free
  double stripe_phase = 0.0;
};

double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * x * (x * (6.0 * x - 15.0) + 10.0);  // C2 ramp, fast spectral falloff
}

// Soft coverage in [0,1]: signed boundary distance pushed through a
// smoothstep ramp, so shape edges carry no appreciable energy above the
// texture band. `feather` is the ramp width in uv units.
double shape_coverage(const ShapeParams& s, double u, double v, double feather) {
  double du = u - s.cx, dv = v - s.cy;
  double c = std::cos(-s.angle), sn = std::sin(-s.angle);
  double ru = du * c - dv * sn, rv = du * sn + dv * c;
  double sd = 0.0;  // negative inside
  switch (s.kind) {
    case 0:
      sd = std::sqrt(du * du + dv * dv) - s.size;
      break;
    case 1:
      sd = std::max(std::abs(ru), std::abs(rv)) - s.size;
      break;
    case 2: {
      // Equilateral triangle of circumradius `size`, apex up before rotation.
      double q = s.size;
      double half_width = (q - rv) / 1.5 * std::sqrt(3.0) * 0.5;
      sd = std::max({-(rv + 0.5 * q), rv - q, std::abs(ru) - half_width});
      break;
    }
    case 3:
      // Sinusoidal bands on an integer wave vector: periodic over the image,
      // so the band pattern is a single spectral line.
      return 0.5 + 0.5 * std::cos(2.0 * M_PI * (s.stripe_mx * u + s.stripe_my * v) +
                                  s.stripe_phase);
    default:
      return 0.0;
  }
  return smoothstep01(0.5 - sd / feather);
}

void render_image(const DataSpec& spec, uint64_t index, float* out) {
  Rng rng = Rng(spec.seed).child("image").child(index);
  const int R = spec.resolution;
  const int S = R * kSuper;

  // Background: a smooth image-periodic wave (integer wave vector), so the
  // low-frequency gradient contributes no spectral leakage skirts.
  static constexpr int kBgWaves[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  const int* bgw = kBgWaves[rng.uniform_int(0, 3)];
  double bg_phase = rng.uniform(0.0, 2.0 * M_PI);
  double c0[3], c1[3], fill[3];
  for (int ch = 0; ch < 3; ++ch) {
    c0[ch] = rng.uniform(-0.70, -0.20);
    c1[ch] = rng.uniform(-0.45, 0.05);
    fill[ch] = rng.uniform(0.15, 0.55);
  }

  ShapeParams shape;
  shape.kind = static_cast<int>(index % static_cast<uint64_t>(spec.classes));
  shape.cx = 0.5 + rng.uniform(-0.10, 0.10);
  shape.cy = 0.5 + rng.uniform(-0.10, 0.10);
  shape.size = rng.uniform(0.22, 0.32);
  shape.angle = rng.uniform(0.0, 2.0 * M_PI);
  static constexpr int kStripeWaves[8][2] = {{2, 0}, {0, 2},  {2, 1},  {1, 2},
                                             {3, 0}, {2, -1}, {-1, 2}, {2, 2}};
  const int* sw = kStripeWaves[rng.uniform_int(0, 7)];
  shape.stripe_mx = sw[0];
  shape.stripe_my = sw[1];
  shape.stripe_phase = rng.uniform(0.0, 2.0 * M_PI);

  double freq = rng.uniform(spec.texture_freq_min, spec.texture_freq_max);
  double tex_angle = rng.uniform(0.0, 2.0 * M_PI);
  double tc = std::cos(tex_angle), ts = std::sin(tex_angle);
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  double amp[3];
  for (int ch = 0; ch < 3; ++ch) amp[ch] = spec.texture_amplitude * rng.uniform(0.8, 1.0);

  const double feather = 6.5 / R;
  std::vector<float> canvas(static_cast<size_t>(3) * S * S);
  for (int y = 0; y < S; ++y) {
    double v = (y + 0.5) / S;
    for (int x = 0; x < S; ++x) {
      double u = (x + 0.5) / S;
      double g = 0.5 + 0.5 * std::sin(2.0 * M_PI * (bgw[0] * u + bgw[1] * v) + bg_phase);
      double cov = shape_coverage(shape, u, v, feather);
      double tex = cov > 0.0 ? std::sin(2.0 * M_PI * freq * (u * tc + v * ts) + phase) : 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        double bg = c0[ch] + (c1[ch] - c0[ch]) * g;
        double fg = fill[ch] + amp[ch] * tex;
        double val = bg + cov * (fg - bg);
        canvas[(static_cast<size_t>(ch) * S + y) * S + x] = static_cast<float>(val);
      }
    }
  }

  for (int ch = 0; ch < 3; ++ch)
    resize_plane(canvas.data() + static_cast<size_t>(ch) * S * S, S, S,
                 out + static_cast<int64_t>(ch) * R * R, R, R, Resample::area);
  for (int64_t i = 0; i < static_cast<int64_t>(3) * R * R; ++i)
    out[i] = std::clamp(out[i], -1.0f, 1.0f);
}

}  // namespace

ImageSet generate_textured_dataset(const DataSpec& spec) {
  spec.validate();
  ImageSet set;
  set.resolution = spec.resolution;
  set.seed = spec.seed;
  set.images = Tensor<float>({spec.count, 3, spec.resolution, spec.resolution});
  set.labels.resize(static_cast<size_t>(spec.count));
  int64_t per = static_cast<int64_t>(3) * spec.resolution * spec.resolution;
  float* base = set.images.ptr();
  parallel_for(spec.count, [&](int64_t i) {
    render_image(spec, static_cast<uint64_t>(i), base + i * per);
  });
  for (int i = 0; i < spec.count; ++i)
    set.labels[static_cast<size_t>(i)] = static_cast<int>(i % spec.classes);
  return set;
}

// ---- image io ----------------------------------------------------------------

namespace {

cv::Mat tensor_to_mat(const Tensor<float>& images, int index) {
  int H = images.dim(2), W = images.dim(3);
  int64_t plane = static_cast<int64_t>(H) * W;
  const float* p = images.ptr() + static_cast<int64_t>(index) * 3 * plane;
  cv::Mat m(H, W, CV_8UC3);
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < W; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        float v = p[ch * plane + static_cast<int64_t>(y) * W + x];
        int q = static_cast<int>(std::lround((v + 1.0f) * 127.5f));
        row[x * 3 + (2 - ch)] = static_cast<uint8_t>(std::clamp(q, 0, 255));  // BGR
      }
    }
  }
  return m;
}

void mat_to_tensor(const cv::Mat& m, float* dst, int64_t plane) {
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int ch = 0; ch < 3; ++ch)
        dst[ch * plane + static_cast<int64_t>(y) * m.cols + x] =
            static_cast<float>(row[x * 3 + (2 - ch)]) / 127.5f - 1.0f;
  }
}

}  // namespace

void write_png(const std::string& path, const Tensor<float>& images, int index) {
  if (!cv::imwrite(path, tensor_to_mat(images, index)))
    throw std::runtime_error("failed to write " + path);
}

Tensor<float> read_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IngestError("undecodable image: " + path);
  Tensor<float> out({1, 3, m.rows, m.cols});
  mat_to_tensor(m, out.ptr(), static_cast<int64_t>(m.rows) * m.cols);
  return out;
}

void write_png_grid(const std::string& path, const Tensor<float>& images, int cols) {
  int n = images.dim(0), H = images.dim(2), W = images.dim(3);
  cols = std::max(1, std::min(cols, n));
  int rows = (n + cols - 1) / cols;
  cv::Mat grid(rows * H, cols * W, CV_8UC3, cv::Scalar(0, 0, 0));
  for (int i = 0; i < n; ++i) {
    cv::Mat cell = tensor_to_mat(images, i);
    cell.copyTo(grid(cv::Rect((i % cols) * W, (i / cols) * H, W, H)));
  }
  if (!cv::imwrite(path, grid)) throw std::runtime_error("failed to write " + path);
}

ImageSet load_image_folder(const std::string& path, int resolution) {
  if (resolution <= 0 || resolution % 4 != 0)
    throw ConfigError("load_image_folder: resolution must be a positive multiple of 4");
  std::vector<std::string> files;
  if (!fs::is_directory(path)) throw IngestError("not a directory: " + path);
  for (const auto& e : fs::directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestError("empty image folder: " + path);

  ImageSet set;
  set.resolution = resolution;
  set.images = Tensor<float>({static_cast<int>(files.size()), 3, resolution, resolution});
  set.labels.assign(files.size(), 0);
  int64_t plane = static_cast<int64_t>(resolution) * resolution;
  for (size_t i = 0; i < files.size(); ++i) {
    cv::Mat m = cv::imread(files[i], cv::IMREAD_COLOR);
    if (m.empty()) throw IngestError("undecodable image: " + files[i]);
    int side = std::min(m.rows, m.cols);
    cv::Rect roi((m.cols - side) / 2, (m.rows - side) / 2, side, side);
    cv::Mat sq = m(roi).clone();
    Tensor<float> full({1, 3, side, side});
    mat_to_tensor(sq, full.ptr(), static_cast<int64_t>(side) * side);
    Resample method = side > resolution ? Resample::area : Resample::bilinear;
    for (int ch = 0; ch < 3; ++ch)
      resize_plane(full.ptr() + static_cast<int64_t>(ch) * side * side, side, side,
                   set.images.ptr() + (static_cast<int64_t>(i) * 3 + ch) * plane, resolution,
                   resolution, method);
  }
  return set;
}

void save_image_set(const ImageSet& set, const DataSpec& spec, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["spec"] = {{"count", spec.count},
                      {"resolution", spec.resolution},
                      {"classes", spec.classes},
                      {"texture_freq_min", spec.texture_freq_min},
                      {"texture_freq_max", spec.texture_freq_max},
                      {"texture_amplitude", spec.texture_amplitude},
                      {"seed", spec.seed}};
  manifest["labels"] = set.labels;
  std::vector<std::string> names;
  for (int i = 0; i < set.count(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d.png", i);
    names.emplace_back(buf);
    write_png(dir + "/" + buf, set.images, i);
  }
  manifest["files"] = names;
  std::ofstream f(dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
}

ImageSet load_image_set(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw IngestError("missing manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  auto files = manifest.at("files").get<std::vector<std::string>>();
  auto labels = manifest.at("labels").get<std::vector<int>>();
  int res = manifest.at("spec").at("resolution").get<int>();
  ImageSet set;
  set.resolution = res;
  set.seed = manifest.at("spec").at("seed").get<uint64_t>();
  set.labels = labels;
  set.images = Tensor<float>({static_cast<int>(files.size()), 3, res, res});
  int64_t per = static_cast<int64_t>(3) * res * res;
  for (size_t i = 0; i < files.size(); ++i) {
    Tensor<float> img = read_image(dir + "/" + files[i]);
    if (img.dim(2) != res || img.dim(3) != res)
      throw IngestError("image size mismatch in " + files[i]);
    std::copy_n(img.ptr(), per, set.images.ptr() + static_cast<int64_t>(i) * per);
  }
  return set;
}

}  // namespace lplab
