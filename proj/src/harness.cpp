#include "airode/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace airode::harness {

using nlohmann::json;

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::SnrDb: return "snr_db";
    case SweepAxis::CompressionRatio: return "compression_ratio";
    case SweepAxis::KernelSize: return "kernel_size";
    case SweepAxis::CodebookSize: return "codebook_size";
  }
  return "?";
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::AirOde: return "airode";
    case Baseline::RandomPhase: return "randomPhase";
    case Baseline::NoOde: return "noOde";
    case Baseline::Digital: return "digital";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& s) {
  for (auto a : {SweepAxis::SnrDb, SweepAxis::CompressionRatio, SweepAxis::KernelSize, SweepAxis::CodebookSize})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

Baseline parse_baseline(const std::string& s) {
  for (auto b : {Baseline::AirOde, Baseline::RandomPhase, Baseline::NoOde, Baseline::Digital})
    if (to_string(b) == s) return b;
  throw ConfigError("unknown baseline '" + s + "'");
}

// ---- config ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (dataset != "synthetic" && dataset != "idx") throw ConfigError("dataset must be 'synthetic' or 'idx'");
  if (dataset == "idx" && (idx_train_images.empty() || idx_train_labels.empty()))
    throw ConfigError("idx dataset needs idx_train_images and idx_train_labels");
  if (sweep_values.empty()) throw ConfigError("sweep_values must not be empty");
  if (baselines.empty()) throw ConfigError("baselines must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!checkpoint.empty() && axis != SweepAxis::SnrDb)
    throw ConfigError("a checkpoint can only be reused for an snr_db sweep");
  for (double v : sweep_values) {
    if (axis == SweepAxis::KernelSize && (v < 1 || std::fmod(v, 2.0) != 1.0))
      throw ConfigError("kernel sizes must be odd positive integers");
    if (axis == SweepAxis::CodebookSize && (v < 1 || v != std::floor(v)))
      throw ConfigError("codebook sizes must be positive integers");
    if (axis == SweepAxis::CompressionRatio && !(v >= 1.0)) throw ConfigError("compression ratios must be >= 1");
  }
  try {
    network.validate();
    schedule.validate();
    loss.validate();
    channel.validate();
    (void)data::parse_encoding(encoding);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

json ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["dataset"] = dataset;
  j["idx_train_images"] = idx_train_images;
  j["idx_train_labels"] = idx_train_labels;
  j["idx_test_images"] = idx_test_images;
  j["idx_test_labels"] = idx_test_labels;
  j["desk_scale"] = desk_scale;
  j["train_count"] = train_count;
  j["validation_count"] = validation_count;
  j["test_count"] = test_count;
  j["encoding"] = encoding;
  j["data_seed"] = data_seed;
  j["image_size"] = network.image_size;
  j["classes"] = network.classes;
  j["kernel_size"] = network.kernel_size;
  j["pool"] = network.pool;
  j["encoder_channels"] = network.encoder_channels;
  j["hidden_channels"] = network.hidden_channels;
  j["st_channels"] = network.st_channels;
  j["st_pool"] = network.st_pool;
  j["elements_x"] = elements_x;
  j["elements_y"] = elements_y;
  j["rician_factor"] = channel.rician_factor;
  j["pathloss_a_db"] = channel.pathloss_a_db;
  j["pathloss_b"] = channel.pathloss_b;
  j["channel_seed"] = channel_seed;
  j["channel_file"] = channel_file;
  j["network_seed"] = network_seed;
  j["stage1_epochs"] = schedule.stage1_epochs;
  j["stage2_epochs"] = schedule.stage2_epochs;
  j["batch_size"] = schedule.batch_size;
  j["learning_rate"] = schedule.adam.learning_rate;
  j["adam_beta1"] = schedule.adam.beta1;
  j["adam_beta2"] = schedule.adam.beta2;
  j["adam_eps"] = schedule.adam.eps;
  j["train_seed"] = schedule.seed;
  j["validate_every"] = schedule.validate_every;
  j["alpha"] = loss.alpha;
  j["beta"] = loss.beta;
  j["sweep_axis"] = to_string(axis);
  j["sweep_values"] = sweep_values;
  std::vector<std::string> b;
  for (auto x : baselines) b.push_back(to_string(x));
  j["baselines"] = b;
  j["seeds"] = seeds;
  j["snr_db"] = snr_db;
  j["out_dir"] = out_dir;
  j["checkpoint"] = checkpoint;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
  if (j.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + j.at("schema_version").dump());
  ExperimentConfig c;
  const json defaults = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + std::string(key) + "' has the wrong type");
    }
  };
  get("dataset", c.dataset);
  get("idx_train_images", c.idx_train_images);
  get("idx_train_labels", c.idx_train_labels);
  get("idx_test_images", c.idx_test_images);
  get("idx_test_labels", c.idx_test_labels);
  get("desk_scale", c.desk_scale);
  get("train_count", c.train_count);
  get("validation_count", c.validation_count);
  get("test_count", c.test_count);
  get("encoding", c.encoding);
  get("data_seed", c.data_seed);
  get("image_size", c.network.image_size);
  get("classes", c.network.classes);
  get("kernel_size", c.network.kernel_size);
  get("pool", c.network.pool);
  get("encoder_channels", c.network.encoder_channels);
  get("hidden_channels", c.network.hidden_channels);
  get("st_channels", c.network.st_channels);
  get("st_pool", c.network.st_pool);
  get("elements_x", c.elements_x);
  get("elements_y", c.elements_y);
  get("rician_factor", c.channel.rician_factor);
  get("pathloss_a_db", c.channel.pathloss_a_db);
  get("pathloss_b", c.channel.pathloss_b);
  get("channel_seed", c.channel_seed);
  get("channel_file", c.channel_file);
  get("network_seed", c.network_seed);
  get("stage1_epochs", c.schedule.stage1_epochs);
  get("stage2_epochs", c.schedule.stage2_epochs);
  get("batch_size", c.schedule.batch_size);
  get("learning_rate", c.schedule.adam.learning_rate);
  get("adam_beta1", c.schedule.adam.beta1);
  get("adam_beta2", c.schedule.adam.beta2);
  get("adam_eps", c.schedule.adam.eps);
  get("train_seed", c.schedule.seed);
  get("validate_every", c.schedule.validate_every);
  get("alpha", c.loss.alpha);
  get("beta", c.loss.beta);
  std::string axis = to_string(c.axis);
  get("sweep_axis", axis);
  c.axis = parse_axis(axis);
  get("sweep_values", c.sweep_values);
  if (j.contains("baselines")) {
    std::vector<std::string> b;
    get("baselines", b);
    c.baselines.clear();
    for (const auto& s : b) c.baselines.push_back(parse_baseline(s));
  }
  get("seeds", c.seeds);
  get("snr_db", c.snr_db);
  get("out_dir", c.out_dir);
  get("checkpoint", c.checkpoint);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return from_json(j);
}

namespace {

std::uint64_t hash_json(const json& j) {
  const std::string s = j.dump();
  return ris::fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Fields that determine a trained network.
json training_fields(const ExperimentConfig& cfg) {
  json j = cfg.to_json();
  for (const char* k : {"sweep_axis", "sweep_values", "baselines", "seeds", "snr_db", "out_dir", "checkpoint"}) j.erase(k);
  return j;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

}  // namespace

std::uint64_t ExperimentConfig::hash() const { return hash_json(to_json()); }

CompressionPreset compression_preset(std::size_t image_size, double ratio, std::size_t max_channels) {
  CompressionPreset best;
  double best_err = std::numeric_limits<double>::infinity();
  const double px = static_cast<double>(image_size * image_size);
  for (std::size_t pool = 1; pool < image_size; ++pool) {
    if (image_size % pool != 0 || image_size / pool < 2) continue;
    const std::size_t side = image_size / pool;
    for (std::size_t ch = 1; ch <= max_channels; ++ch) {
      const std::size_t C = ch * side * side;
      const double err = std::abs(px / static_cast<double>(C) - ratio);
      if (err < best_err) {
        best_err = err;
        best = {pool, ch, C, px / static_cast<double>(C)};
      }
    }
  }
  if (best.feature_length == 0) throw ConfigError("no encoder geometry for image size " + std::to_string(image_size));
  return best;
}

data::Dataset load_or_synthesize_dataset(const ExperimentConfig& cfg) {
  const auto enc = data::parse_encoding(cfg.encoding);
  if (cfg.dataset == "idx") {
    data::IdxSource src;
    src.train_images = cfg.idx_train_images;
    src.train_labels = cfg.idx_train_labels;
    src.test_images = cfg.idx_test_images;
    src.test_labels = cfg.idx_test_labels;
    src.desk_scale = cfg.desk_scale;
    src.train = cfg.train_count;
    src.validation = cfg.validation_count;
    src.test = cfg.test_count;
    src.classes = cfg.network.classes;
    src.encoding = enc;
    src.seed = cfg.data_seed;
    auto d = data::load_idx(src);
    if (d.image_size != cfg.network.image_size)
      throw ConfigError("dataset image size " + std::to_string(d.image_size) + " differs from configured image_size");
    return d;
  }
  data::SyntheticParams p;
  p.image_size = cfg.network.image_size;
  p.classes = cfg.network.classes;
  p.train = cfg.train_count;
  p.validation = cfg.validation_count;
  p.test = cfg.test_count;
  p.encoding = enc;
  p.seed = cfg.data_seed;
  return data::synthesize(p);
}

ris::ChannelRealization make_channel(const ExperimentConfig& cfg, std::size_t kernel_size) {
  if (!cfg.channel_file.empty()) {
    std::ifstream in(cfg.channel_file);
    if (!in) throw ConfigError("cannot open channel file " + cfg.channel_file);
    auto ch = ris::channel_from_json(json::parse(in));
    if (ch.geometry.ris_per_group != kernel_size)
      throw ConfigError("channel file has " + std::to_string(ch.geometry.ris_per_group) + " RISs per group, need " +
                        std::to_string(kernel_size));
    return ch;
  }
  auto geom = ris::SystemGeometry::make_default(kernel_size, cfg.elements_x, cfg.elements_y, cfg.channel_seed);
  return ris::sample_channel(geom, cfg.channel, cfg.channel_seed);
}

TrainedModel train_model(const ExperimentConfig& cfg, const data::Dataset& data, std::size_t codebook_size) {
  TrainedModel m;
  m.channel = make_channel(cfg, cfg.network.kernel_size);
  m.codebooks = ris::build_codebooks(m.channel);
  if (codebook_size) m.codebooks = ris::restrict_codebooks(m.codebooks, codebook_size);
  m.net = std::make_unique<nn::AirOdeNetwork>(cfg.network, m.codebooks, cfg.network_seed);
  m.training = train::train_two_stage(*m.net, data.train, data.validation, cfg.schedule, cfg.loss);
  m.training.checkpoint["meta"] = {{"training_config_hash", hex(hash_json(training_fields(cfg)))},
                                   {"channel_hash", hex(ris::channel_hash(m.channel))},
                                   {"codebook_size", codebook_size}};
  return m;
}

metrics::MetricsRecord evaluate_baseline(const TrainedModel& model, const data::Dataset& data, Baseline baseline,
                                         double snr_db, std::uint64_t seed) {
  nn::AirOdeNetwork& net = *model.net;
  if (baseline == Baseline::Digital) return train::evaluate(net, data.test);

  analog::IndexGrid chosen = net.ode.chosen_indices();
  if (baseline == Baseline::RandomPhase) {
    std::mt19937_64 rng(ris::split_seed(seed, 0x5eed));
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t k = 0; k < chosen[p].size(); ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, model.codebooks[p][k].size() - 1);
        chosen[p][k] = pick(rng);
      }
  }
  auto ctx = analog::AnalogContext::build(model.channel, model.codebooks, chosen, snr_db, seed);
  ctx.route_ris = baseline != Baseline::NoOde;

  const std::size_t N = data.test.size();
  std::vector<std::uint64_t> keys(N);
  std::iota(keys.begin(), keys.end(), 0);
  const std::size_t batch = 100, Q = net.config().classes, px = data.test.images.size() / N;
  ComplexTensor recon(data.test.images.shape()), tags({N, Q});
  for (std::size_t start = 0; start < N; start += batch) {
    std::vector<std::size_t> idx(std::min(batch, N - start));
    std::iota(idx.begin(), idx.end(), start);
    auto part = data.test.subset(idx);
    auto r = analog::deploy_pipeline(net, part.images, ctx, std::span(keys).subspan(start, idx.size()));
    std::copy(r.reconstructions.data().begin(), r.reconstructions.data().end(), recon.data().begin() + start * px);
    std::copy(r.tags.data().begin(), r.tags.data().end(), tags.data().begin() + start * Q);
  }
  return metrics::evaluate_batch(recon, data.test.images, tags, data.test.labels, Q);
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "baseline,sweepValue,seed,psnr,ssim,accuracy\n";
  os << std::setprecision(12);
  for (const auto& r : rows)
    os << to_string(r.baseline) << ',' << r.sweep_value << ',' << r.seed << ',' << r.metrics.psnr_db << ','
       << r.metrics.ssim << ',' << r.metrics.accuracy << '\n';
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs) {
  cfg.validate();
  const data::Dataset data = load_or_synthesize_dataset(cfg);
  const std::filesystem::path out = cfg.out_dir;
  if (write_outputs) std::filesystem::create_directories(out);

  ExperimentResult res;
  json trainings = json::array();
  auto record_training = [&](const TrainedModel& m, std::size_t point, const ExperimentConfig& pc) {
    json t = {{"sweep_index", point},
              {"channel_seed", pc.channel_seed},
              {"channel_hash", hex(ris::channel_hash(m.channel))},
              {"feature_length", pc.network.feature_length()},
              {"compression_ratio", pc.network.compression_ratio()},
              {"kernel_size", pc.network.kernel_size}};
    if (write_outputs) {
      const std::string ck = "checkpoint_" + std::to_string(point) + ".json";
      const std::string lg = "train_log_" + std::to_string(point) + ".csv";
      write_file(out / ck, m.training.checkpoint.dump());
      write_file(out / lg, train::log_csv(m.training.log));
      t["checkpoint"] = ck;
      t["train_log"] = lg;
    }
    trainings.push_back(t);
  };

  std::vector<ResultRow> rows;
  auto evaluate_point = [&](const TrainedModel& m, double value, double snr) {
    for (Baseline b : cfg.baselines)
      for (std::uint64_t seed : cfg.seeds) rows.push_back({b, value, seed, evaluate_baseline(m, data, b, snr, seed)});
  };

  if (cfg.axis == SweepAxis::SnrDb) {
    TrainedModel m;
    if (!cfg.checkpoint.empty()) {
      std::ifstream in(cfg.checkpoint);
      if (!in) throw ConfigError("cannot open checkpoint " + cfg.checkpoint);
      const json ck = json::parse(in);
      const std::string want = hex(hash_json(training_fields(cfg)));
      if (!ck.contains("meta") || ck["meta"].value("training_config_hash", "") != want)
        throw nn::CheckpointError("checkpoint was trained with a different configuration");
      m.channel = make_channel(cfg, cfg.network.kernel_size);
      m.codebooks = ris::build_codebooks(m.channel);
      m.net = std::make_unique<nn::AirOdeNetwork>(cfg.network, m.codebooks, cfg.network_seed);
      nn::load_checkpoint(*m.net, ck);
      m.training.checkpoint = ck;
    } else {
      m = train_model(cfg, data);
      record_training(m, 0, cfg);
    }
    for (double snr : cfg.sweep_values) evaluate_point(m, snr, snr);
  } else {
    for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
      const double v = cfg.sweep_values[i];
      ExperimentConfig pc = cfg;
      std::size_t codebook_size = 0;
      if (cfg.axis == SweepAxis::CompressionRatio) {
        const auto preset = compression_preset(cfg.network.image_size, v);
        pc.network.pool = preset.pool;
        pc.network.encoder_channels = preset.channels;
      } else if (cfg.axis == SweepAxis::KernelSize) {
        pc.network.kernel_size = static_cast<std::size_t>(v);
      } else {
        codebook_size = static_cast<std::size_t>(v);
      }
      pc.network.validate();
      TrainedModel m = train_model(pc, data, codebook_size);
      record_training(m, i, pc);
      evaluate_point(m, v, cfg.snr_db);
    }
  }

  auto rank = [&](Baseline x) { return std::find(cfg.baselines.begin(), cfg.baselines.end(), x) - cfg.baselines.begin(); };
  std::stable_sort(rows.begin(), rows.end(),
                   [&](const ResultRow& a, const ResultRow& b) { return rank(a.baseline) < rank(b.baseline); });
  res.rows = std::move(rows);
  res.csv = results_csv(res.rows);
  res.manifest = {{"schema_version", ExperimentConfig::kSchemaVersion},
                  {"config", cfg.to_json()},
                  {"config_hash", hex(cfg.hash())},
                  {"channel_seed", cfg.channel_seed},
                  {"dataset", {{"source", data.source}, {"seed", data.seed}, {"train", data.train.size()},
                               {"validation", data.validation.size()}, {"test", data.test.size()}}},
                  {"trainings", trainings},
                  {"rows", res.rows.size()},
                  {"checkpoint", cfg.checkpoint}};
  if (write_outputs) {
    write_file(out / "results.csv", res.csv);
    write_file(out / "manifest.json", res.manifest.dump(2) + "\n");
  }
  return res;
}

}  // namespace airode::harness
