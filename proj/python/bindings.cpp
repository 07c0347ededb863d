#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ipdfer/checkpoint.hpp"
#include "ipdfer/errors.hpp"
#include "ipdfer/evalrep.hpp"
#include "ipdfer/factorgen.hpp"
#include "ipdfer/losses.hpp"
#include "ipdfer/nets.hpp"
#include "ipdfer/trainer.hpp"

namespace py = pybind11;
using namespace ipdfer;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int> dims(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) dims[static_cast<std::size_t>(i)] = static_cast<int>(arr.shape(i));
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(dims), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

data::GeneratorConfig generator_config(int n_identities, const std::vector<double>& yaws, int k_expressions,
                                       int n_folds, int height, int width, int channels, std::uint64_t seed) {
  data::GeneratorConfig cfg;
  cfg.n_identities = n_identities;
  cfg.yaws = yaws;
  cfg.k_expressions = k_expressions;
  cfg.n_folds = n_folds;
  cfg.shape = {height, width, channels};
  cfg.seed = seed;
  return cfg;
}

std::vector<int> split_of(const data::Dataset& ds, const std::string& split, int fold) {
  if (split == "train") return ds.train_indices(fold);
  if (split == "test") return ds.test_indices(fold);
  if (split != "all") throw ConfigError("split must be train, test, or all");
  std::vector<int> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

ArchConfig arch_from_kwargs(const data::Dataset& ds, int feature_dim, const std::vector<int>& widths) {
  ArchConfig arch;
  arch.feature_dim = feature_dim;
  if (widths.size() != 3) throw ConfigError("widths must have three entries");
  arch.widths = {widths[0], widths[1], widths[2]};
  arch.height = ds.config.shape.height;
  arch.width = ds.config.shape.width;
  arch.channels = ds.config.shape.channels;
  arch.k_expressions = ds.config.k_expressions;
  arch.k_pose = data::kPoseBuckets;
  return arch;
}

py::dict report_to_dict(const eval::EvalReport& rep) {
  py::dict d;
  d["n"] = rep.n;
  d["overall_accuracy"] = rep.overall_accuracy;
  d["per_class_accuracy"] = rep.per_class_accuracy;
  d["per_class_count"] = rep.per_class_count;
  d["confusion"] = rep.confusion;
  d["bucket_count"] = rep.bucket_count;
  d["bucket_accuracy"] = rep.bucket_accuracy;
  py::dict subsets;
  for (const auto& s : rep.yaw_subsets) {
    py::dict e;
    e["count"] = s.count;
    e["accuracy"] = s.accuracy;
    subsets[s.name.c_str()] = e;
  }
  d["subsets"] = subsets;
  if (rep.mean_abs_cos) d["mean_abs_cos"] = *rep.mean_abs_cos;
  if (rep.max_abs_cos) d["max_abs_cos"] = *rep.max_abs_cos;
  if (rep.disentanglement_score) d["disentanglement_score"] = *rep.disentanglement_score;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "identity/pose/expression disentanglement on procedural faces";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<TrainError>(m, "TrainError");

  m.def(
      "render",
      [](int identity_id, double yaw_deg, int expression_id, int height, int width, int channels, int k_expressions) {
        return array_from_tensor(
            data::render(data::make_factors(identity_id, yaw_deg, expression_id), {height, width, channels}, k_expressions));
      },
      py::arg("identity_id"), py::arg("yaw_deg"), py::arg("expression_id"), py::arg("height") = 32,
      py::arg("width") = 32, py::arg("channels") = 1, py::arg("k_expressions") = 4,
      "Rasterize one factor tuple to a (C,H,W) array in [0,1].");

  m.def("pose_bucket", &data::pose_bucket, py::arg("yaw_deg"),
        "Yaw magnitude to pose label: [0,10) [10,20) [20,30) [30,40) and 4 for >=40.");

  m.def("identity_params", &data::identity_params_for, py::arg("identity_id"),
        "Deterministic (aspect, eye spacing, feature scale, base intensity) for an id.");

  m.def(
      "build_dataset",
      [](const std::string& path, int n_identities, const std::vector<double>& yaws, int k_expressions, int n_folds,
         int height, int width, int channels, std::uint64_t seed) {
        data::Dataset ds = data::build_dataset(
            generator_config(n_identities, yaws, k_expressions, n_folds, height, width, channels, seed));
        data::save_dataset(ds, path);
        return ds.samples.size();
      },
      py::arg("path"), py::arg("n_identities") = 20,
      py::arg("yaws") = std::vector<double>{0.0, 15.0, 25.0, 35.0, 45.0}, py::arg("k_expressions") = 4,
      py::arg("n_folds") = 5, py::arg("height") = 32, py::arg("width") = 32, py::arg("channels") = 1,
      py::arg("seed") = 1, "Write a dataset file; returns the sample count.");

  m.def(
      "load_dataset",
      [](const std::string& path) {
        data::Dataset ds = data::load_dataset(path);
        const std::size_t n = ds.samples.size();
        const auto& sh = ds.config.shape;
        py::array_t<double> images({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(sh.channels),
                                    static_cast<py::ssize_t>(sh.height), static_cast<py::ssize_t>(sh.width)});
        py::array_t<int> identity(static_cast<py::ssize_t>(n)), y_e(static_cast<py::ssize_t>(n)),
            y_p(static_cast<py::ssize_t>(n)), fold(static_cast<py::ssize_t>(n));
        py::array_t<double> yaw(static_cast<py::ssize_t>(n));
        const std::int64_t m = static_cast<std::int64_t>(sh.channels) * sh.height * sh.width;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& s = ds.samples[i];
          std::copy(s.image.data(), s.image.data() + m, images.mutable_data() + static_cast<std::int64_t>(i) * m);
          identity.mutable_at(static_cast<py::ssize_t>(i)) = s.factors.identity_id;
          y_e.mutable_at(static_cast<py::ssize_t>(i)) = s.y_e;
          y_p.mutable_at(static_cast<py::ssize_t>(i)) = s.y_p;
          fold.mutable_at(static_cast<py::ssize_t>(i)) = s.fold;
          yaw.mutable_at(static_cast<py::ssize_t>(i)) = s.factors.yaw_deg;
        }
        py::dict d;
        d["images"] = images;
        d["identity_id"] = identity;
        d["y_e"] = y_e;
        d["y_p"] = y_p;
        d["fold"] = fold;
        d["yaw_deg"] = yaw;
        py::dict meta;
        meta["height"] = sh.height;
        meta["width"] = sh.width;
        meta["channels"] = sh.channels;
        meta["k_expressions"] = ds.config.k_expressions;
        meta["k_pose"] = data::kPoseBuckets;
        meta["n_identities"] = ds.config.n_identities;
        meta["n_folds"] = ds.config.n_folds;
        meta["seed"] = ds.config.seed;
        d["meta"] = meta;
        return d;
      },
      py::arg("path"), "Load a dataset file into numpy arrays.");

  // loss terms on plain arrays
  m.def(
      "loss_recon",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_fake_ipe,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& x_fake_ip,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& x, const std::vector<int>& y_e,
         int neutral_class) {
        return loss::reconstruction_value(tensor_from_array(x_fake_ipe), tensor_from_array(x_fake_ip),
                                          tensor_from_array(x), y_e, neutral_class);
      },
      py::arg("x_fake_ipe"), py::arg("x_fake_ip"), py::arg("x"), py::arg("y_e"), py::arg("neutral_class") = 0);

  m.def(
      "loss_cos",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f_id,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& f_exp) {
        return loss::cosine_orthogonality_value(tensor_from_array(f_id), tensor_from_array(f_exp));
      },
      py::arg("f_id"), py::arg("f_exp"));

  m.def(
      "loss_confusion",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
        return loss::pose_confusion_value(tensor_from_array(logits));
      },
      py::arg("logits"));

  m.def(
      "loss_ce",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits, const std::vector<int>& labels) {
        return loss::cross_entropy_value(tensor_from_array(logits), labels);
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "assemble_generator_loss",
      [](double neu_fake, double exp_fake, double id, double recon, double c, double cos, double confusion,
         double lambda1, double lambda2, double lambda3, double lambda4, double beta1, double beta2) {
        loss::GeneratorTerms t{neu_fake, exp_fake, id, recon, c, cos, confusion};
        loss::LossWeights w{lambda1, lambda2, lambda3, lambda4, beta1, beta2};
        return loss::assemble_generator_loss(t, w);
      },
      py::arg("neu_fake"), py::arg("exp_fake"), py::arg("id"), py::arg("recon"), py::arg("c") = 0.0,
      py::arg("cos") = 0.0, py::arg("confusion") = 0.0, py::arg("lambda1") = 0.001, py::arg("lambda2") = 0.001,
      py::arg("lambda3") = 1.0, py::arg("lambda4") = 10.0, py::arg("beta1") = 0.5, py::arg("beta2") = 1.0,
      "Returns (g_prime, g_total).");

  m.def(
      "compose",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f_id,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& f_pose,
         const py::object& f_exp) {
        if (f_exp.is_none()) return array_from_tensor(compose(tensor_from_array(f_id), tensor_from_array(f_pose)));
        return array_from_tensor(compose(tensor_from_array(f_id), tensor_from_array(f_pose),
                                         tensor_from_array(f_exp.cast<py::array_t<double>>())));
      },
      py::arg("f_id"), py::arg("f_pose"), py::arg("f_exp") = py::none(),
      "Feature sum; with three inputs the result is invariant to argument order.");

  m.def(
      "pretrain_identity_encoder",
      [](const std::string& dataset_path, const std::string& out_checkpoint, int epochs, double lr, int batch_size,
         std::uint64_t seed, int fold, int feature_dim, const std::vector<int>& widths) {
        data::Dataset ds = data::load_dataset(dataset_path);
        ArchConfig arch = arch_from_kwargs(ds, feature_dim, widths);
        ModelBundle seeded(Mode::id_only, arch, seed);
        train::PretrainConfig cfg{epochs, lr, batch_size, seed, fold};
        auto res = train::pretrain_identity_encoder(*seeded.e_id, ds, cfg);
        train::CheckpointMeta meta;
        meta.arch = arch;
        meta.seed = seed;
        meta.pretrain_accuracy = res.train_accuracy;
        train::write_identity_checkpoint(out_checkpoint, *seeded.e_id, meta);
        return res.train_accuracy;
      },
      py::arg("dataset"), py::arg("out_checkpoint"), py::arg("epochs") = 30, py::arg("lr") = 1e-3,
      py::arg("batch_size") = 32, py::arg("seed") = 1, py::arg("fold") = 0, py::arg("feature_dim") = 64,
      py::arg("widths") = std::vector<int>{16, 32, 64},
      "Pretrain, freeze, and save the identity encoder; returns training identity accuracy.");

  m.def(
      "train",
      [](const std::string& dataset_path, const std::string& out_dir, const std::string& mode,
         const std::string& id_checkpoint, int epochs, int batch_size, double lr, std::uint64_t seed, int fold,
         int feature_dim, const std::vector<int>& widths, const std::string& resume) {
        data::Dataset ds = data::load_dataset(dataset_path);
        ArchConfig arch = arch_from_kwargs(ds, feature_dim, widths);
        Mode m_ = mode_from_name(mode);
        auto bundle = std::make_unique<ModelBundle>(m_, arch, seed);
        if (bundle->e_id) {
          if (id_checkpoint.empty()) throw ConfigError("mode '" + mode + "' needs id_checkpoint");
          train::apply_identity_encoder(train::read_checkpoint(id_checkpoint), *bundle);
        }
        train::TrainConfig cfg;
        cfg.mode = m_;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr = lr;
        cfg.seed = seed;
        cfg.fold = fold;
        cfg.out_dir = out_dir;
        train::Trainer trainer(*bundle, ds, cfg);
        if (!resume.empty()) trainer.resume_from(resume);
        py::dict last;
        trainer.run([&](const loss::LossReport& rep) {
          last["step"] = rep.step;
          last["epoch"] = rep.epoch;
          if (rep.exp_cls) last["exp_cls"] = *rep.exp_cls;
          if (rep.recon) last["recon"] = *rep.recon;
          if (rep.g_total) last["g_total"] = *rep.g_total;
        });
        return last;
      },
      py::arg("dataset"), py::arg("out_dir"), py::arg("mode") = "ipd", py::arg("id_checkpoint") = "",
      py::arg("epochs") = 30, py::arg("batch_size") = 32, py::arg("lr") = 1e-4, py::arg("seed") = 1,
      py::arg("fold") = 0, py::arg("feature_dim") = 64, py::arg("widths") = std::vector<int>{16, 32, 64},
      py::arg("resume") = "", "Run the alternating training procedure; returns the last step's report.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& dataset_path, const std::string& split, int fold) {
        data::Dataset ds = data::load_dataset(dataset_path);
        auto bundle = train::bundle_from_checkpoint(train::read_checkpoint(checkpoint));
        return report_to_dict(eval::evaluate(*bundle, ds, split_of(ds, split, fold)));
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("split") = "test", py::arg("fold") = 0);

  m.def(
      "synthesize",
      [](const std::string& checkpoint, const std::string& dataset_path, const std::string& out_dir, int count,
         const std::string& split, int fold) {
        data::Dataset ds = data::load_dataset(dataset_path);
        auto bundle = train::bundle_from_checkpoint(train::read_checkpoint(checkpoint));
        std::vector<int> idx = split_of(ds, split, fold);
        if (static_cast<int>(idx.size()) > count) idx.resize(static_cast<std::size_t>(count));
        eval::write_synthesis_panels(*bundle, ds, idx, out_dir);
        return idx.size();
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("out_dir"), py::arg("count") = 8, py::arg("split") = "test",
      py::arg("fold") = 0);

  m.def(
      "export_embeddings",
      [](const std::string& checkpoint, const std::string& dataset_path, const std::string& path,
         const std::string& split, int fold) {
        data::Dataset ds = data::load_dataset(dataset_path);
        auto bundle = train::bundle_from_checkpoint(train::read_checkpoint(checkpoint));
        std::vector<int> idx = split_of(ds, split, fold);
        eval::export_embeddings(*bundle, ds, idx, path);
        return idx.size();
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("path"), py::arg("split") = "test", py::arg("fold") = 0);

  m.attr("__version__") = "0.1.0";
}
