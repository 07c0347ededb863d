#include "ipdfer/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ipdfer/errors.hpp"
#include "ipdfer/rng.hpp"

namespace ipdfer::eval {

namespace {

int argmax_row(const Tensor& t, int row) {
  int best = 0;
  for (int c = 1; c < t.dim(1); ++c)
    if (t.at2(row, c) > t.at2(row, best)) best = c;
  return best;
}

Tensor encode_all(const ConvEncoder& enc, const data::Dataset& ds, const std::vector<int>& indices) {
  // Batched to bound peak memory on large splits.
  const int kChunk = 64;
  Tensor out({static_cast<int>(indices.size()), enc.feature_dim()});
  for (std::size_t at = 0; at < indices.size(); at += kChunk) {
    const std::size_t end = std::min(indices.size(), at + kChunk);
    std::vector<int> part(indices.begin() + static_cast<std::ptrdiff_t>(at),
                          indices.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor f = enc.forward(data::stack_images(ds, part));
    std::copy(f.data(), f.data() + f.size(), out.data() + static_cast<std::int64_t>(at) * enc.feature_dim());
  }
  return out;
}

double l1_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

std::vector<int> predict(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices) {
  Tensor f = encode_all(*bundle.e_exp, ds, indices);
  Tensor logits = bundle.c_exp->forward(f);
  std::vector<int> pred(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) pred[i] = argmax_row(logits, static_cast<int>(i));
  return pred;
}

EvalReport tabulate(const data::Dataset& ds, const std::vector<int>& indices, const std::vector<int>& pred,
                    int k_expressions) {
  if (pred.size() != indices.size()) throw std::invalid_argument("tabulate: prediction count mismatch");
  EvalReport rep;
  rep.n = static_cast<int>(indices.size());
  const int k = k_expressions;
  const int kp = data::kPoseBuckets;
  rep.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
  rep.per_class_count.assign(static_cast<std::size_t>(k), 0);
  rep.confusion.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k), 0.0));
  rep.bucket_count.assign(static_cast<std::size_t>(kp), 0);
  rep.bucket_accuracy.assign(static_cast<std::size_t>(kp), 0.0);
  if (indices.empty()) return rep;

  int correct_all = 0;
  std::vector<int> class_correct(static_cast<std::size_t>(k), 0);
  std::vector<int> bucket_correct(static_cast<std::size_t>(kp), 0);
  const double thresholds[4] = {10.0, 20.0, 30.0, 40.0};
  int sub_count[4] = {0, 0, 0, 0};
  int sub_correct[4] = {0, 0, 0, 0};

  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(indices[i])];
    const bool ok = pred[i] == s.y_e;
    correct_all += ok;
    rep.per_class_count[static_cast<std::size_t>(s.y_e)]++;
    class_correct[static_cast<std::size_t>(s.y_e)] += ok;
    rep.confusion[static_cast<std::size_t>(s.y_e)][static_cast<std::size_t>(pred[i])] += 1.0;
    rep.bucket_count[static_cast<std::size_t>(s.y_p)]++;
    bucket_correct[static_cast<std::size_t>(s.y_p)] += ok;
    for (int t = 0; t < 4; ++t)
      if (s.factors.yaw_deg > thresholds[t]) {
        sub_count[t]++;
        sub_correct[t] += ok;
      }
  }

  rep.overall_accuracy = static_cast<double>(correct_all) / rep.n;
  for (int c = 0; c < k; ++c) {
    if (rep.per_class_count[static_cast<std::size_t>(c)] > 0) {
      rep.per_class_accuracy[static_cast<std::size_t>(c)] =
          static_cast<double>(class_correct[static_cast<std::size_t>(c)]) / rep.per_class_count[static_cast<std::size_t>(c)];
      double row = 0.0;
      for (int j = 0; j < k; ++j) row += rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      for (int j = 0; j < k; ++j) rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /= row;
    }
  }
  for (int p = 0; p < kp; ++p)
    if (rep.bucket_count[static_cast<std::size_t>(p)] > 0)
      rep.bucket_accuracy[static_cast<std::size_t>(p)] =
          static_cast<double>(bucket_correct[static_cast<std::size_t>(p)]) / rep.bucket_count[static_cast<std::size_t>(p)];

  rep.yaw_subsets.push_back({"all", rep.n, rep.overall_accuracy});
  const char* names[4] = {"yaw>10", "yaw>20", "yaw>30", "yaw>40"};
  for (int t = 0; t < 4; ++t)
    rep.yaw_subsets.push_back(
        {names[t], sub_count[t], sub_count[t] > 0 ? static_cast<double>(sub_correct[t]) / sub_count[t] : 0.0});
  return rep;
}

EvalReport evaluate(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                    std::uint64_t score_seed) {
  EvalReport rep = tabulate(ds, indices, indices.empty() ? std::vector<int>{} : predict(bundle, ds, indices),
                            bundle.arch.k_expressions);
  if (indices.empty()) return rep;
  if (bundle.e_id) {
    OrthogonalityStats os = orthogonality_report(bundle, ds, indices);
    rep.mean_abs_cos = os.mean_abs_cos;
    rep.max_abs_cos = os.max_abs_cos;
  }
  if (bundle.g_dec && bundle.e_id) rep.disentanglement_score = disentanglement_score(bundle, ds, indices, score_seed);
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "n=" << n << "\n";
  os << "overall_accuracy=" << overall_accuracy << "\n";
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c)
    os << "class_" << c << "_accuracy=" << per_class_accuracy[c] << " count=" << per_class_count[c] << "\n";
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    os << "confusion_row_" << r << "=";
    for (std::size_t c = 0; c < confusion[r].size(); ++c) os << (c ? "," : "") << confusion[r][c];
    os << "\n";
  }
  for (std::size_t p = 0; p < bucket_count.size(); ++p)
    os << "bucket_" << p << "_accuracy=" << bucket_accuracy[p] << " count=" << bucket_count[p] << "\n";
  for (const auto& s : yaw_subsets) {
    os << "subset_" << s.name << "_count=" << s.count;
    if (s.count > 0) os << " accuracy=" << s.accuracy;
    os << "\n";
  }
  if (mean_abs_cos) os << "mean_abs_cos=" << *mean_abs_cos << "\n";
  if (max_abs_cos) os << "max_abs_cos=" << *max_abs_cos << "\n";
  if (disentanglement_score) os << "disentanglement_score=" << *disentanglement_score << "\n";
  return os.str();
}

std::vector<Tensor> synthesis_panel(const ModelBundle& bundle, const Tensor& image) {
  if (!bundle.g_dec || !bundle.e_id) throw ConfigError("synthesis requires a decoder-bearing checkpoint");
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)},
               std::vector<double>(image.data(), image.data() + image.size()));
  auto unbatch = [&](const Tensor& t) {
    return Tensor({t.dim(1), t.dim(2), t.dim(3)}, std::vector<double>(t.data(), t.data() + t.size()));
  };
  Tensor f_id = bundle.e_id->forward(batch);
  Tensor f_exp = bundle.e_exp->forward(batch);
  std::vector<Tensor> panel;
  panel.push_back(image);
  panel.push_back(unbatch(bundle.g_dec->forward(f_id)));
  if (bundle.e_pose) {
    Tensor f_pose = bundle.e_pose->forward(batch);
    panel.push_back(unbatch(bundle.g_dec->forward(compose(f_id, f_pose))));
    panel.push_back(unbatch(bundle.g_dec->forward(compose(f_id, f_pose, f_exp))));
  } else {
    panel.push_back(unbatch(bundle.g_dec->forward(compose(f_id, f_exp))));
  }
  return panel;
}

void write_synthesis_panels(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const char* ext = ds.config.shape.channels == 3 ? ".ppm" : ".pgm";
  for (int idx : indices) {
    std::vector<Tensor> panel = synthesis_panel(bundle, ds.samples[static_cast<std::size_t>(idx)].image);
    std::vector<std::string> names;
    if (panel.size() == 4)
      names = {"real", "id", "id_pose", "id_pose_exp"};
    else
      names = {"real", "id", "id_exp"};
    for (std::size_t i = 0; i < panel.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%04d_%s", idx, names[i].c_str());
      data::write_image(panel[i], out_dir + "/" + buf + ext);
    }
  }
}

OrthogonalityStats orthogonality_report(const ModelBundle& bundle, const data::Dataset& ds,
                                        const std::vector<int>& indices) {
  if (!bundle.e_id) throw ConfigError("orthogonality report requires an identity encoder");
  OrthogonalityStats st;
  if (indices.empty()) return st;
  Tensor f_id = encode_all(*bundle.e_id, ds, indices);
  Tensor f_exp = encode_all(*bundle.e_exp, ds, indices);
  const int n = f_id.dim(0), d = f_id.dim(1);
  double total = 0.0, mx = 0.0;
  for (int r = 0; r < n; ++r) {
    double s = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < d; ++i) {
      s += f_id.at2(r, i) * f_exp.at2(r, i);
      na2 += f_id.at2(r, i) * f_id.at2(r, i);
      nb2 += f_exp.at2(r, i) * f_exp.at2(r, i);
    }
    const double c = std::abs(s) / (std::sqrt(na2) * std::sqrt(nb2) + 1e-8);
    total += c;
    mx = std::max(mx, c);
  }
  st.mean_abs_cos = total / n;
  st.max_abs_cos = mx;
  return st;
}

double disentanglement_score(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                             std::uint64_t score_seed) {
  if (!bundle.g_dec || !bundle.e_id) throw ConfigError("disentanglement score requires a decoder");
  if (indices.empty()) return 0.0;
  std::set<int> id_set;
  for (int i : indices) id_set.insert(ds.samples[static_cast<std::size_t>(i)].factors.identity_id);
  std::vector<int> ids(id_set.begin(), id_set.end());
  if (ids.size() < 2) throw ConfigError("disentanglement score needs at least 2 identities in the split");

  int closer = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(indices[i])];
    Tensor batch({1, ds.config.shape.channels, ds.config.shape.height, ds.config.shape.width},
                 std::vector<double>(s.image.data(), s.image.data() + s.image.size()));
    Tensor f_neutral = bundle.e_id->forward(batch);
    if (bundle.e_pose) f_neutral = compose(f_neutral, bundle.e_pose->forward(batch));
    Tensor synth = bundle.g_dec->forward(f_neutral);
    Tensor synth_img({ds.config.shape.channels, ds.config.shape.height, ds.config.shape.width},
                     std::vector<double>(synth.data(), synth.data() + synth.size()));

    // Deterministic pick of a different identity from the same split.
    Rng rng(Rng::mix(score_seed, static_cast<std::uint64_t>(indices[i])));
    int other = s.factors.identity_id;
    while (other == s.factors.identity_id) other = ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(ids.size())))];

    Tensor own = data::render(data::make_factors(s.factors.identity_id, s.factors.yaw_deg, 0), ds.config.shape,
                              ds.config.k_expressions);
    Tensor theirs = data::render(data::make_factors(other, s.factors.yaw_deg, 0), ds.config.shape,
                                 ds.config.k_expressions);
    if (l1_distance(synth_img, own) < l1_distance(synth_img, theirs)) ++closer;
  }
  return static_cast<double>(closer) / static_cast<double>(indices.size());
}

void export_embeddings(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  Tensor f = encode_all(*bundle.e_exp, ds, indices);
  const int d = f.dim(1);
  os << "# index\tidentity_id\ty_e\ty_p";
  for (int i = 0; i < d; ++i) os << "\tf" << i;
  os << "\n";
  char buf[32];
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = ds.samples[static_cast<std::size_t>(indices[r])];
    os << indices[r] << "\t" << s.factors.identity_id << "\t" << s.y_e << "\t" << s.y_p;
    for (int i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(f.at2(static_cast<int>(r), i))));
      os << "\t" << buf;
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

double class_separation_ratio(const Tensor& raw, const std::vector<int>& labels) {
  const int n = raw.dim(0), d = raw.dim(1);
  if (n == 0) throw std::invalid_argument("class_separation_ratio: empty input");
  std::set<int> classes(labels.begin(), labels.end());
  std::vector<int> cls(classes.begin(), classes.end());
  if (cls.size() < 2) throw std::invalid_argument("class_separation_ratio: need at least 2 classes");

  // Compactness is measured on feature directions: rows are unit-normalized
  // so the ratio does not reward plain norm growth.
  Tensor features = raw;
  for (int r = 0; r < n; ++r) {
    double n2 = 0.0;
    for (int i = 0; i < d; ++i) n2 += features.at2(r, i) * features.at2(r, i);
    const double inv = 1.0 / (std::sqrt(n2) + 1e-12);
    for (int i = 0; i < d; ++i) features.at2(r, i) *= inv;
  }

  std::vector<std::vector<double>> centroid(cls.size(), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<int> count(cls.size(), 0);
  auto class_index = [&](int label) {
    return static_cast<std::size_t>(std::lower_bound(cls.begin(), cls.end(), label) - cls.begin());
  };
  for (int r = 0; r < n; ++r) {
    const std::size_t c = class_index(labels[static_cast<std::size_t>(r)]);
    count[c]++;
    for (int i = 0; i < d; ++i) centroid[c][static_cast<std::size_t>(i)] += features.at2(r, i);
  }
  for (std::size_t c = 0; c < cls.size(); ++c)
    for (int i = 0; i < d; ++i) centroid[c][static_cast<std::size_t>(i)] /= count[c];

  double within = 0.0;
  for (int r = 0; r < n; ++r) {
    const std::size_t c = class_index(labels[static_cast<std::size_t>(r)]);
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      double diff = features.at2(r, i) - centroid[c][static_cast<std::size_t>(i)];
      s += diff * diff;
    }
    within += std::sqrt(s);
  }
  within /= n;

  double between = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < cls.size(); ++a)
    for (std::size_t b = a + 1; b < cls.size(); ++b) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) {
        double diff = centroid[a][static_cast<std::size_t>(i)] - centroid[b][static_cast<std::size_t>(i)];
        s += diff * diff;
      }
      between += std::sqrt(s);
      ++pairs;
    }
  between /= pairs;
  return between / (within + 1e-12);
}

std::string subset_table(const std::vector<std::pair<std::string, EvalReport>>& columns) {
  if (columns.empty()) return "";
  std::ostringstream os;
  os << "subset      count";
  for (const auto& [name, rep] : columns) {
    (void)rep;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "  %10s", name.c_str());
    os << buf;
  }
  os << "\n";
  const auto& subsets = columns.front().second.yaw_subsets;
  for (std::size_t row = 0; row < subsets.size(); ++row) {
    char head[64];
    std::snprintf(head, sizeof(head), "%-10s %6d", subsets[row].name.c_str(), subsets[row].count);
    os << head;
    for (const auto& [name, rep] : columns) {
      (void)name;
      char buf[32];
      if (rep.yaw_subsets[row].count > 0)
        std::snprintf(buf, sizeof(buf), "  %10.4f", rep.yaw_subsets[row].accuracy);
      else
        std::snprintf(buf, sizeof(buf), "  %10s", "-");
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace ipdfer::eval
