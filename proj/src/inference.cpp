#include "srlab/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "srlab/metrics.hpp"
#include "srlab/resample.hpp"
#include "srlab/runtime.hpp"

namespace srlab {

namespace fs = std::filesystem;

Tensor predict(const Model& model, const Tensor& lr) {
  NoGradGuard no_grad;
  Tensor x = lr.to(model.dtype());
  std::array<double, 3> mean{};
  if (model.per_image_mean_shift) {
    mean = channel_means(x);
    x = shift_channels(x, mean, -1.0);
  }
  Tensor y = model.forward(x);
  if (model.per_image_mean_shift) y = shift_channels(y, mean, 1.0);
  return y.to(DType::f32);
}

Upscaler model_upscaler(const Model& model) {
  return [&model](const Tensor& lr) { return predict(model, lr); };
}

Upscaler bicubic_upscaler(int scale) {
  return [scale](const Tensor& lr) { return bicubic_resample(lr, Ratio{scale, 1}).to(DType::f32); };
}

Tensor self_ensemble(const Upscaler& f, const Tensor& lr, bool rgb_shuffle) {
  NoGradGuard no_grad;
  const auto transforms = rgb_shuffle ? all_transforms() : dihedral_transforms();
  Shape shape;
  std::vector<double> acc;
  for (const auto& t : transforms) {
    const Tensor y = apply(inverse(t), f(apply(t, lr))).to(DType::f32);
    if (acc.empty()) {
      shape = y.shape();
      acc.assign(static_cast<std::size_t>(y.numel()), 0.0);
    } else if (y.shape() != shape) {
      throw ShapeError("self_ensemble: transform " + t.str() + " changed the output shape to " + shape_str(y.shape()));
    }
    const auto src = y.data<float>();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
  }
  std::vector<float> mean(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / static_cast<double>(transforms.size()));
  return Tensor::from_vector(shape, std::move(mean));
}

Upscaler ensembled(Upscaler f, bool rgb_shuffle) {
  return [f = std::move(f), rgb_shuffle](const Tensor& lr) { return self_ensemble(f, lr, rgb_shuffle); };
}

ImageBuffer upscale(const Model& model, const ImageBuffer& lr) { return to_image(predict(model, to_tensor(lr))); }

ImageBuffer self_ensemble_predict(const Model& model, const ImageBuffer& lr, bool use_rgb_shuffle) {
  return to_image(self_ensemble(model_upscaler(model), to_tensor(lr), use_rgb_shuffle));
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(values.size()));
  a.min = *std::min_element(values.begin(), values.end());
  a.max = *std::max_element(values.begin(), values.end());
  return a;
}

std::vector<EvalRow> EvalReport::sorted_by_delta() const {
  auto out = rows;
  std::stable_sort(out.begin(), out.end(), [](const EvalRow& a, const EvalRow& b) {
    if (a.delta != b.delta) return a.delta < b.delta;
    return a.image < b.image;
  });
  return out;
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_aggregate(std::ostream& out, const std::string& name, const Aggregate& a) {
  out << "# mean_" << name << "=" << g17(a.mean) << "\n# std_" << name << "=" << g17(a.std) << "\n# min_" << name
      << "=" << g17(a.min) << "\n# max_" << name << "=" << g17(a.max) << "\n";
}

std::map<std::string, fs::path> png_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileNotFoundError("directory not found: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out[entry.path().stem().string()] = entry.path();
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
  return s;
}

}  // namespace

void EvalReport::write_csv(const fs::path& path, bool sorted) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# images=" << rows.size() << "\n";
  write_aggregate(out, "psnr", psnr);
  write_aggregate(out, "ssim", ssim);
  if (paired) {
    write_aggregate(out, "psnr_other", psnr_other);
    write_aggregate(out, "delta", delta);
    out << "# improved=" << improved << "\n";
  }
  if (sorted && paired) out << "rank,";
  out << "image,psnr,ssim" << (paired ? ",psnr_other,delta" : "") << "\n";
  const auto ordered = sorted && paired ? sorted_by_delta() : rows;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const auto& r = ordered[i];
    if (sorted && paired) out << i + 1 << ",";
    out << r.image << "," << g17(r.psnr) << "," << g17(r.ssim);
    if (paired) out << "," << g17(r.psnr_other) << "," << g17(r.delta);
    out << "\n";
  }
  if (!out) throw DataError("short write to " + path.string());
}

EvalReport evaluate(const Upscaler& model, const std::vector<ImagePair>& pairs, int scale, const EvalOptions& options,
                    const Upscaler* other) {
  if (pairs.empty()) throw DataError("evaluate: no images to evaluate");
  MetricOptions metric;
  metric.crop_border = options.crop_border < 0 ? scale : options.crop_border;
  metric.luma_only = options.luma_only;
  const bool ensemble = options.self_ensemble || options.rgb_shuffle;
  const Upscaler a = ensemble ? ensembled(model, options.rgb_shuffle) : model;
  Upscaler b;
  if (other) b = ensemble ? ensembled(*other, options.rgb_shuffle) : *other;

  EvalReport report;
  report.paired = other != nullptr;
  report.rows.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& pair = pairs[i];
    check_aligned(pair, scale);
    const Tensor lr = to_tensor(pair.lr);
    EvalRow& row = report.rows[i];
    row.image = pair.stem;
    const ImageBuffer sr = to_image(a(lr));
    row.psnr = psnr(sr, pair.hr, metric);
    row.ssim = ssim(sr, pair.hr, metric);
    if (other) {
      row.psnr_other = psnr(to_image(b(lr)), pair.hr, metric);
      row.delta = row.psnr - row.psnr_other;
    }
  });

  std::vector<double> p, s, po, d;
  for (const auto& r : report.rows) {
    p.push_back(r.psnr);
    s.push_back(r.ssim);
    if (other) {
      po.push_back(r.psnr_other);
      d.push_back(r.delta);
      if (r.delta > 0) ++report.improved;
    }
  }
  report.psnr = aggregate(p);
  report.ssim = aggregate(s);
  report.psnr_other = aggregate(po);
  report.delta = aggregate(d);
  return report;
}

std::vector<ImagePair> load_eval_pairs(const fs::path& hr_dir, const fs::path& lr_dir, int scale,
                                       const std::vector<std::string>* only) {
  const auto hr = png_stems(hr_dir);
  const auto lr = png_stems(lr_dir);
  std::vector<std::string> hr_only, lr_only;
  for (const auto& [stem, _] : hr)
    if (!lr.count(stem)) hr_only.push_back(stem);
  for (const auto& [stem, _] : lr)
    if (!hr.count(stem)) lr_only.push_back(stem);
  if (!hr_only.empty() || !lr_only.empty())
    throw DataError("unmatched images: only in " + hr_dir.string() + ": [" + join(hr_only) + "]; only in " +
                    lr_dir.string() + ": [" + join(lr_only) + "]");
  std::vector<std::string> stems;
  if (only) {
    std::vector<std::string> missing;
    for (const auto& s : *only) (hr.count(s) ? stems : missing).push_back(s);
    if (!missing.empty()) throw DataError("validation list names images not in the dataset: [" + join(missing) + "]");
  } else {
    for (const auto& [stem, _] : hr) stems.push_back(stem);
  }
  if (stems.empty()) throw DataError("no image pairs in " + hr_dir.string());
  std::vector<ImagePair> pairs;
  for (const auto& stem : stems) {
    ImagePair pair{stem, load_image(hr.at(stem)), load_image(lr.at(stem))};
    check_aligned(pair, scale);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<std::string> read_val_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFoundError("validation list not found: " + path.string());
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    fs::path p(line);
    std::string stem = p.extension() == ".png" ? p.stem().string() : p.filename().string();
    if (seen.insert(stem).second) out.push_back(stem);
  }
  return out;
}

}  // namespace srlab
