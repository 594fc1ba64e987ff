#include "beamsel/dataset.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "beamsel/errors.hpp"
#include "beamsel/io.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

using nlohmann::json;

InputTensor InputTensor::from_channel(const CMat& h) {
  InputTensor t;
  t.rows = static_cast<int>(h.rows());
  t.cols = static_cast<int>(h.cols());
  t.data.resize(static_cast<std::size_t>(t.rows) * t.cols * 3);
  for (int r = 0; r < t.rows; ++r) {
    for (int c = 0; c < t.cols; ++c) {
      const Complex v = h(r, c);
      t.at(r, c, 0) = std::abs(v);
      t.at(r, c, 1) = v.real();
      t.at(r, c, 2) = v.imag();
    }
  }
  return t;
}

void InputTensor::validate() const {
  if (data.size() != static_cast<std::size_t>(rows) * cols * 3)
    throw ShapeMismatch("input tensor payload does not match its shape");
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double mag = std::hypot(at(r, c, 1), at(r, c, 2));
      if (std::abs(at(r, c, 0) - mag) > 1e-6)
        throw ShapeMismatch("magnitude plane inconsistent with re/im planes");
    }
}

void DatasetSpec::validate() const {
  if (n_channels < 1) throw ConfigError("n_channels must be positive");
  if (n_noise < 1) throw ConfigError("n_noise must be positive");
  if (cluster_counts.empty()) throw ConfigError("cluster_counts is empty");
  for (int c : cluster_counts)
    if (c < 1) throw ConfigError("cluster counts must be positive");
  if (snr_train_db.empty()) throw ConfigError("snr_train_db is empty");
  dims.validate();
  channel_params.validate();
  mo.validate();
  if (channel_params.tx_geometry.count() != dims.n_t ||
      channel_params.rx_geometry.count() != dims.n_r)
    throw ConfigError("channel geometry does not match system dimensions");
}

std::vector<double> build_label_vector(const HybridBeamformers& bf) {
  std::vector<double> z;
  z.reserve(static_cast<std::size_t>(bf.f_rf.size()) + 2 * bf.f_bb.size() +
            bf.w_rf.size() + 2 * bf.w_bb.size());
  auto push_angles = [&z](const CMat& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) z.push_back(std::arg(m(r, c)));
  };
  auto push_re_im = [&z](const CMat& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) z.push_back(m(r, c).real());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) z.push_back(m(r, c).imag());
  };
  push_angles(bf.f_rf);
  push_re_im(bf.f_bb);
  push_angles(bf.w_rf);
  push_re_im(bf.w_bb);
  return z;
}

namespace {

CMat phases_to_matrix(const double* z, int rows, int cols, double radius) {
  CMat m(rows, cols);
  std::size_t k = 0;
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r)
      m(r, c) = radius * std::exp(Complex(0.0, z[k++]));
  return m;
}

CMat re_im_to_matrix(const double* z, int rows, int cols) {
  CMat m(rows, cols);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  std::size_t k = 0;
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) {
      m(r, c) = Complex(z[k], z[k + n]);
      ++k;
    }
  return m;
}

}  // namespace

HybridBeamformers reconstruct_beamformers(const std::vector<double>& z,
                                          const SystemDims& dims) {
  if (static_cast<int>(z.size()) != dims.label_length())
    throw ShapeMismatch("label vector length does not match dims");
  HybridBeamformers bf;
  const double* p = z.data();
  bf.f_rf = phases_to_matrix(p, dims.n_t, dims.n_rf_t, 1.0 / std::sqrt(dims.n_t));
  p += dims.n_t * dims.n_rf_t;
  bf.f_bb = re_im_to_matrix(p, dims.n_rf_t, dims.n_s);
  p += 2 * dims.n_rf_t * dims.n_s;
  bf.w_rf =
      phases_to_matrix(p, dims.n_rs, dims.n_rf_r, 1.0 / std::sqrt(dims.n_rs));
  p += dims.n_rs * dims.n_rf_r;
  bf.w_bb = re_im_to_matrix(p, dims.n_rf_r, dims.n_s);

  const double norm = bf.precoder().norm();
  if (norm == 0.0) throw ZeroProduct("reconstructed precoder has zero power");
  bf.f_bb *= std::sqrt(static_cast<double>(dims.n_s)) / norm;
  return bf;
}

Dataset build_dataset(const DatasetSpec& spec, const ProgressSink& progress) {
  spec.validate();
  const std::uint64_t l_c = spec.cluster_counts.size();
  const std::uint64_t total = spec.total_samples();

  Dataset ds;
  ds.spec = spec;
  ds.as_inputs.reserve(total);
  ds.as_labels.reserve(total);
  ds.rf_inputs.reserve(total);
  ds.rf_labels.reserve(total);
  ds.selection_rates.reserve(total);

  std::map<std::vector<int>, std::uint32_t> class_ids;
  auto class_of = [&](const SubarrayConfig& cfg) {
    auto [it, inserted] = class_ids.try_emplace(
        cfg.indices, static_cast<std::uint32_t>(ds.class_table.size()));
    if (inserted) ds.class_table.push_back(cfg);
    return it->second;
  };

  struct CleanLabel {
    SelectionResult sel;
    HybridBeamformers bf;
  };

  std::uint64_t done = 0;
  for (int n = 0; n < spec.n_channels; ++n) {
    for (std::uint64_t c = 0; c < l_c; ++c) {
      const std::uint64_t pair = static_cast<std::uint64_t>(n) * l_c + c;
      ChannelParams params = spec.channel_params;
      params.n_clusters = spec.cluster_counts[c];
      const std::uint64_t chan_seed =
          derive_seed(spec.seed, (1ULL << 32) + pair);
      const CMat h = generate_channel(params, chan_seed).h;

      MoSettings mo = spec.mo;
      mo.seed = derive_seed(chan_seed, 1);
      const auto objective = SelectionObjective::hybrid(mo);

      // Labels from the clean channel are shared across noise draws.
      CleanLabel clean;
      if (!spec.label_from_noisy) {
        clean.sel = select_best_subarray(
            h, spec.dims, objective, binomial_checked(spec.dims.n_r, spec.dims.n_rs));
        clean.bf =
            design_hybrid(select_rows(h, clean.sel.best.indices), spec.dims, mo);
      }

      for (int l = 0; l < spec.n_noise; ++l) {
        const std::uint64_t triple = pair * spec.n_noise + l;
        const double snr = spec.snr_train_db[l % spec.snr_train_db.size()];
        const CMat noisy =
            corrupt_channel(h, snr, derive_seed(spec.seed, (2ULL << 32) + triple));

        const SelectionResult* sel = &clean.sel;
        const HybridBeamformers* bf = &clean.bf;
        CleanLabel noisy_label;
        if (spec.label_from_noisy) {
          noisy_label.sel = select_best_subarray(
              noisy, spec.dims, objective,
              binomial_checked(spec.dims.n_r, spec.dims.n_rs));
          noisy_label.bf = design_hybrid(
              select_rows(noisy, noisy_label.sel.best.indices), spec.dims, mo);
          sel = &noisy_label.sel;
          bf = &noisy_label.bf;
        }

        ds.as_inputs.push_back(InputTensor::from_channel(noisy));
        ds.as_labels.push_back(class_of(sel->best));
        ds.rf_inputs.push_back(
            InputTensor::from_channel(select_rows(noisy, sel->best.indices)));
        ds.rf_labels.push_back(build_label_vector(*bf));
        ds.selection_rates.push_back(sel->rate);
        if (progress) progress(++done, total);
      }
    }
  }
  return ds;
}

namespace {

constexpr int kDatasetFormatVersion = 1;

void write_tensors(const std::filesystem::path& path,
                   const std::vector<InputTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  std::vector<float> buf;
  for (const auto& t : tensors) {
    buf.assign(t.data.begin(), t.data.end());
    write_f32(os, buf);
  }
}

std::vector<InputTensor> read_tensors(const std::filesystem::path& path,
                                      int rows, int cols, std::size_t count) {
  const auto raw = read_f32(path);
  const std::size_t per = static_cast<std::size_t>(rows) * cols * 3;
  if (raw.size() != per * count)
    throw ShapeMismatch("tensor payload size mismatch in " + path.string());
  std::vector<InputTensor> tensors(count);
  for (std::size_t i = 0; i < count; ++i) {
    tensors[i].rows = rows;
    tensors[i].cols = cols;
    tensors[i].data.assign(raw.begin() + static_cast<std::ptrdiff_t>(i * per),
                           raw.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return tensors;
}

}  // namespace

json dims_to_json(const SystemDims& d) {
  return json{{"n_t", d.n_t},         {"n_r", d.n_r},
              {"n_rs", d.n_rs},       {"n_s", d.n_s},
              {"n_rf_t", d.n_rf_t},   {"n_rf_r", d.n_rf_r},
              {"rho", d.rho},         {"sigma_n2", d.sigma_n2}};
}

SystemDims dims_from_json(const json& j) {
  SystemDims d;
  d.n_t = j.at("n_t").get<int>();
  d.n_r = j.at("n_r").get<int>();
  d.n_rs = j.at("n_rs").get<int>();
  d.n_s = j.at("n_s").get<int>();
  d.n_rf_t = j.at("n_rf_t").get<int>();
  d.n_rf_r = j.at("n_rf_r").get<int>();
  d.rho = j.value("rho", 1.0);
  d.sigma_n2 = j.value("sigma_n2", 1.0);
  return d;
}

json mo_to_json(const MoSettings& m) {
  return json{{"max_alternations", m.max_alternations},
              {"max_manifold_iters", m.max_manifold_iters},
              {"rel_obj_tol", m.rel_obj_tol},
              {"line_search_shrink", m.line_search.shrink},
              {"line_search_sufficient_decrease", m.line_search.sufficient_decrease},
              {"restarts", m.restarts},
              {"seed", m.seed}};
}

MoSettings mo_from_json(const json& j) {
  MoSettings m;
  m.max_alternations = j.value("max_alternations", m.max_alternations);
  m.max_manifold_iters = j.value("max_manifold_iters", m.max_manifold_iters);
  m.rel_obj_tol = j.value("rel_obj_tol", m.rel_obj_tol);
  m.line_search.shrink = j.value("line_search_shrink", m.line_search.shrink);
  m.line_search.sufficient_decrease =
      j.value("line_search_sufficient_decrease", m.line_search.sufficient_decrease);
  m.restarts = j.value("restarts", m.restarts);
  m.seed = j.value("seed", m.seed);
  return m;
}

json dataset_spec_to_json(const DatasetSpec& s) {
  return json{{"n_channels", s.n_channels},
              {"cluster_counts", s.cluster_counts},
              {"n_noise", s.n_noise},
              {"snr_train_db", s.snr_train_db},
              {"dims", dims_to_json(s.dims)},
              {"channel_params", params_to_json(s.channel_params)},
              {"mo", mo_to_json(s.mo)},
              {"seed", s.seed},
              {"label_from_noisy", s.label_from_noisy}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  s.n_channels = j.at("n_channels").get<int>();
  s.cluster_counts = j.at("cluster_counts").get<std::vector<int>>();
  s.n_noise = j.at("n_noise").get<int>();
  s.snr_train_db = j.at("snr_train_db").get<std::vector<double>>();
  s.dims = dims_from_json(j.at("dims"));
  s.channel_params = params_from_json(j.at("channel_params"));
  s.mo = mo_from_json(j.at("mo"));
  s.seed = j.at("seed").get<std::uint64_t>();
  s.label_from_noisy = j.value("label_from_noisy", false);
  return s;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& d = ds.spec.dims;

  json class_table = json::array();
  for (const auto& cfg : ds.class_table)
    class_table.push_back(json{{"indices", cfg.indices}, {"id", cfg.id}});

  json meta{{"format_version", kDatasetFormatVersion},
            {"spec", dataset_spec_to_json(ds.spec)},
            {"class_table", class_table},
            {"as_samples", ds.as_inputs.size()},
            {"rf_samples", ds.rf_inputs.size()},
            {"label_length", d.label_length()},
            {"selection_rates", ds.selection_rates}};
  std::ofstream js(dir / "meta.json");
  if (!js) throw ConfigError("cannot write " + (dir / "meta.json").string());
  js << meta.dump(2) << "\n";

  write_tensors(dir / "as_inputs.bin", ds.as_inputs);
  write_tensors(dir / "rf_inputs.bin", ds.rf_inputs);
  {
    std::ofstream os(dir / "as_labels.bin", std::ios::binary);
    if (!os) throw ConfigError("cannot write as_labels.bin");
    write_u32(os, ds.as_labels);
  }
  {
    std::ofstream os(dir / "rf_labels.bin", std::ios::binary);
    if (!os) throw ConfigError("cannot write rf_labels.bin");
    std::vector<float> buf;
    for (const auto& z : ds.rf_labels) {
      buf.assign(z.begin(), z.end());
      write_f32(os, buf);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream js(dir / "meta.json");
  if (!js) throw ConfigError("cannot open " + (dir / "meta.json").string());
  const json meta = json::parse(js);
  if (meta.at("format_version").get<int>() != kDatasetFormatVersion)
    throw ConfigError("unsupported dataset format version");

  Dataset ds;
  ds.spec = dataset_spec_from_json(meta.at("spec"));
  for (const auto& entry : meta.at("class_table")) {
    SubarrayConfig cfg;
    cfg.indices = entry.at("indices").get<std::vector<int>>();
    cfg.id = entry.at("id").get<std::uint64_t>();
    ds.class_table.push_back(cfg);
  }
  ds.selection_rates = meta.at("selection_rates").get<std::vector<double>>();

  const auto as_count = meta.at("as_samples").get<std::size_t>();
  const auto rf_count = meta.at("rf_samples").get<std::size_t>();
  const auto& d = ds.spec.dims;
  ds.as_inputs = read_tensors(dir / "as_inputs.bin", d.n_r, d.n_t, as_count);
  ds.rf_inputs = read_tensors(dir / "rf_inputs.bin", d.n_rs, d.n_t, rf_count);
  ds.as_labels = read_u32(dir / "as_labels.bin");
  if (ds.as_labels.size() != as_count)
    throw ShapeMismatch("as_labels count mismatch");

  const auto raw = read_f32(dir / "rf_labels.bin");
  const auto g = static_cast<std::size_t>(d.label_length());
  if (raw.size() != g * rf_count) throw ShapeMismatch("rf_labels size mismatch");
  ds.rf_labels.resize(rf_count);
  for (std::size_t i = 0; i < rf_count; ++i)
    ds.rf_labels[i].assign(raw.begin() + static_cast<std::ptrdiff_t>(i * g),
                           raw.begin() + static_cast<std::ptrdiff_t>((i + 1) * g));
  return ds;
}

}  // namespace beamsel
