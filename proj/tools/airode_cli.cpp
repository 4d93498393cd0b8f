// Command-line front end: training, evaluation, sweeps, channel and dataset tools.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "airode/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace airode;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<bool> desk_scale;
};

harness::ExperimentConfig load_config(const std::string& path, const Overrides& o) {
  auto cfg = harness::ExperimentConfig::load(path);
  if (o.seed) {
    cfg.data_seed = cfg.channel_seed = cfg.network_seed = cfg.schedule.seed = *o.seed;
  }
  if (o.out) cfg.out_dir = *o.out;
  if (o.desk_scale) cfg.desk_scale = *o.desk_scale;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_idx(const fs::path& images, const fs::path& labels, const train::LabeledImages& set) {
  const std::size_t N = set.size(), R = set.images.dim(1), C = set.images.dim(2);
  auto be32 = [](std::string& s, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
  };
  std::string img, lab;
  be32(img, 2051);
  be32(img, static_cast<std::uint32_t>(N));
  be32(img, static_cast<std::uint32_t>(R));
  be32(img, static_cast<std::uint32_t>(C));
  for (cplx z : set.images.data()) img.push_back(static_cast<char>(std::lround(std::clamp(std::abs(z), 0.0, 1.0) * 255.0)));
  be32(lab, 2049);
  be32(lab, static_cast<std::uint32_t>(N));
  for (std::size_t l : set.labels) lab.push_back(static_cast<char>(l));
  write_text(images, img);
  write_text(labels, lab);
}

int fail(const std::string& category, const std::string& msg, int code) {
  std::cerr << "error: " << category << ": " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Air-ODE semantic communication toolkit"};
  app.require_subcommand(1);
  Overrides ov;
  std::uint64_t seed = 0;
  std::string out;
  bool desk = true;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override every seed in the config");
    sub->add_option("--out", out, "Override the output directory");
    sub->add_flag("--desk-scale,!--full-scale", desk, "Desk-scale (default) or full-scale dataset");
  };

  std::string config_path, checkpoint_path, channel_path;
  std::size_t group = 1, ris_index = 1;

  auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoint, log and channel");
  train_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_overrides(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint over the configured SNR grid");
  eval_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint written by train")->required();
  add_overrides(eval_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "Run the configured sweep and write results.csv");
  sweep_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_overrides(sweep_cmd);

  auto* channels_cmd = app.add_subcommand("channels", "Channel tools");
  channels_cmd->require_subcommand(1);
  auto* gen_cmd = channels_cmd->add_subcommand("gen", "Emit the channel realization as JSON");
  gen_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_overrides(gen_cmd);

  auto* codebook_cmd = app.add_subcommand("codebook", "Codebook tools");
  codebook_cmd->require_subcommand(1);
  auto* inspect_cmd = codebook_cmd->add_subcommand("inspect", "Print one feasible weight set as index,re,im CSV");
  inspect_cmd->add_option("channel", channel_path, "Channel JSON")->required();
  inspect_cmd->add_option("--group", group, "RIS group, 1-based")->check(CLI::Range(1, 3));
  inspect_cmd->add_option("--ris", ris_index, "RIS within the group, 1-based")->check(CLI::PositiveNumber);

  auto* dataset_cmd = app.add_subcommand("dataset", "Dataset tools");
  dataset_cmd->require_subcommand(1);
  auto* synth_cmd = dataset_cmd->add_subcommand("synth", "Write the synthetic dataset as IDX files");
  synth_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_overrides(synth_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, gen_cmd, synth_cmd}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--out")) ov.out = out;
    if (sub->count("--desk-scale") || sub->count("--full-scale")) ov.desk_scale = desk;
  }

  try {
    if (train_cmd->parsed()) {
      const auto cfg = load_config(config_path, ov);
      const auto data = harness::load_or_synthesize_dataset(cfg);
      auto model = harness::train_model(cfg, data);
      const fs::path dir = cfg.out_dir;
      write_text(dir / "checkpoint.json", model.training.checkpoint.dump());
      write_text(dir / "train_log.csv", train::log_csv(model.training.log));
      write_text(dir / "channel.json", ris::channel_to_json(model.channel).dump(2) + "\n");
      const auto test = train::evaluate(*model.net, data.test);
      std::cout << "test psnr=" << test.psnr_db << " ssim=" << test.ssim << " accuracy=" << test.accuracy << '\n';
      write_text(dir / "confusion.csv", test.confusion.to_csv());
    } else if (eval_cmd->parsed() || sweep_cmd->parsed()) {
      auto cfg = load_config(config_path, ov);
      if (eval_cmd->parsed()) {
        cfg.checkpoint = checkpoint_path;
        cfg.axis = harness::SweepAxis::SnrDb;
        cfg.validate();
      }
      const auto res = harness::run_experiment(cfg);
      std::cout << res.csv;
    } else if (gen_cmd->parsed()) {
      const auto cfg = load_config(config_path, ov);
      const auto ch = harness::make_channel(cfg, cfg.network.kernel_size);
      const std::string text = ris::channel_to_json(ch).dump(2) + "\n";
      if (ov.out)
        write_text(fs::path(*ov.out) / "channel.json", text);
      else
        std::cout << text;
    } else if (inspect_cmd->parsed()) {
      std::ifstream in(channel_path);
      if (!in) return fail("io", "cannot open " + channel_path, 4);
      const auto ch = ris::channel_from_json(json::parse(in));
      if (ris_index > ch.geometry.ris_per_group)
        return fail("usage", "--ris exceeds the " + std::to_string(ch.geometry.ris_per_group) + " RISs per group", 2);
      const auto set = ris::track_and_rotate(ris::enumerate_codebook(ch.panel(group - 1, ris_index - 1)));
      std::printf("index,re,im\n");
      for (std::size_t i = 0; i < set.size(); ++i)
        std::printf("%zu,%.17g,%.17g\n", i, set.entries[i].real(), set.entries[i].imag());
    } else if (synth_cmd->parsed()) {
      auto cfg = load_config(config_path, ov);
      cfg.dataset = "synthetic";
      const auto data = harness::load_or_synthesize_dataset(cfg);
      const fs::path dir = cfg.out_dir;
      write_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", data.train);
      write_idx(dir / "validation-images-idx3-ubyte", dir / "validation-labels-idx1-ubyte", data.validation);
      write_idx(dir / "test-images-idx3-ubyte", dir / "test-labels-idx1-ubyte", data.test);
      std::cout << "wrote " << data.train.size() << '/' << data.validation.size() << '/' << data.test.size()
                << " images to " << dir.string() << '\n';
    }
  } catch (const harness::ConfigError& e) {
    return fail("config", e.what(), 3);
  } catch (const data::IdxError& e) {
    return fail("data", e.what(), 4);
  } catch (const json::exception& e) {
    return fail("format", e.what(), 4);
  } catch (const ris::ChannelError& e) {
    return fail("channel", e.what(), 5);
  } catch (const nn::CheckpointError& e) {
    return fail("checkpoint", e.what(), 5);
  } catch (const analog::DeploymentError& e) {
    return fail("deployment", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
