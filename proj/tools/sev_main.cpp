// Command-line front end: synthetic corpus generation, training, embedding
// extraction, trial scoring and metric evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "sev/sev.hpp"

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::string out_dir;
  sev::data::SynthConfig cfg;
};

int run_synth(const SynthArgs& args) {
  const fs::path root(args.out_dir);
  fs::create_directories(root / "feats");
  sev::data::SynthCorpus corpus = sev::data::synth_corpus(args.cfg);

  std::vector<sev::data::ManifestEntry> train_entries, eval_entries;
  auto dump = [&](const std::vector<sev::data::FrameSequence>& utts,
                  std::vector<sev::data::ManifestEntry>& entries) {
    for (const auto& u : utts) {
      const std::string rel = "feats/" + u.utt_id + ".saef";
      sev::data::write_features(root / rel, u);
      entries.push_back({u.utt_id, u.speaker_id, rel});
    }
  };
  dump(corpus.train_utts, train_entries);
  dump(corpus.eval_utts, eval_entries);
  sev::data::write_manifest(root / "train.manifest", train_entries);
  sev::data::write_manifest(root / "eval.manifest", eval_entries);
  sev::data::write_trials(root / "trials.txt", corpus.trials);

  std::size_t targets = 0;
  for (const auto& t : corpus.trials) targets += t.target;
  std::cout << "wrote " << corpus.train_utts.size() << " train + "
            << corpus.eval_utts.size() << " eval utterances for "
            << args.cfg.num_speakers << " speakers, " << corpus.trials.size()
            << " trials (" << targets << " target) under " << root.string()
            << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_path) {
  const sev::Config cfg = sev::parse_config_file(config_path);
  if (cfg.train.train_manifest.empty()) {
    throw std::runtime_error("train: config has no train_manifest");
  }
  fs::path manifest(cfg.train.train_manifest);
  if (manifest.is_relative()) {
    manifest = fs::path(config_path).parent_path() / manifest;
  }

  std::vector<sev::data::FrameSequence> utts =
      sev::data::load_manifest_features(manifest);
  for (auto& u : utts) u = sev::data::apply_preprocess(u, cfg.train.preprocess);
  sev::data::LabeledCorpus corpus = sev::data::label_corpus(std::move(utts));

  sev::Model<float> model = sev::build_model<float>(cfg.model);
  std::cout << "training " << sev::architecture_name(cfg.model.architecture)
            << " model, " << sev::total_trainable(model.params)
            << " trainable parameters, " << corpus.utts.size()
            << " utterances\n";
  const sev::TrainResult result = sev::train(model, corpus, cfg.train);

  sev::save_checkpoint(out_path, model, cfg.train.preprocess);
  sev::write_loss_history(out_path + ".loss.txt", result.history);
  std::printf("steps %zu final-loss %.6f train-accuracy %.2f%%\n",
              result.history.size(),
              result.history.empty() ? 0.0 : result.history.back().loss,
              100.0 * result.train_accuracy);
  return 0;
}

int run_extract(const std::string& model_path, const std::string& manifest_path,
                const std::string& out_dir, unsigned threads) {
  sev::LoadedModel<float> loaded = sev::load_checkpoint<float>(model_path);
  std::vector<sev::data::FrameSequence> utts =
      sev::data::load_manifest_features(manifest_path);
  for (auto& u : utts) u = sev::data::apply_preprocess(u, loaded.preprocess);

  fs::create_directories(out_dir);
  const auto embeddings = sev::extract_embeddings(loaded.model, utts, threads);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    sev::data::FrameSequence e;
    e.utt_id = utts[i].utt_id;
    e.dim = embeddings[i].size();
    e.frames = embeddings[i];
    sev::data::write_features(fs::path(out_dir) / (utts[i].utt_id + ".saef"), e);
  }
  std::cout << "extracted " << utts.size() << " embeddings (dim "
            << loaded.model.cfg.d_emb << ") to " << out_dir << "\n";
  return 0;
}

int run_score(const std::string& emb_dir, const std::string& trials_path,
              const std::string& out_path) {
  const sev::data::TrialSet trials = sev::data::read_trials(trials_path);
  std::map<std::string, std::vector<float>> cache;
  auto embedding = [&](const std::string& id) -> const std::vector<float>& {
    auto it = cache.find(id);
    if (it == cache.end()) {
      sev::data::FrameSequence fs_ =
          sev::data::read_features(fs::path(emb_dir) / (id + ".saef"));
      it = cache.emplace(id, std::move(fs_.frames)).first;
    }
    return it->second;
  };

  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("score: cannot open " + out_path);
  char buf[256];
  for (const auto& t : trials) {
    const double s = sev::metrics::cosine_score<float>(embedding(t.enroll),
                                                       embedding(t.test));
    std::snprintf(buf, sizeof(buf), "%s %s %.10g\n", t.enroll.c_str(),
                  t.test.c_str(), s);
    os << buf;
  }
  std::cout << "scored " << trials.size() << " trials -> " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& scores_path, const std::string& trials_path) {
  const sev::data::TrialSet trials = sev::data::read_trials(trials_path);
  std::map<std::pair<std::string, std::string>, double> scores;
  {
    std::ifstream is(scores_path);
    if (!is) throw std::runtime_error("eval: cannot open " + scores_path);
    std::string enroll, test;
    double s;
    while (is >> enroll >> test >> s) scores[{enroll, test}] = s;
  }
  std::vector<double> target_scores, nontarget_scores;
  for (const auto& t : trials) {
    auto it = scores.find({t.enroll, t.test});
    if (it == scores.end()) {
      throw std::runtime_error("eval: no score for trial " + t.enroll + " " + t.test);
    }
    (t.target ? target_scores : nontarget_scores).push_back(it->second);
  }
  const sev::metrics::EvalMetrics m =
      sev::metrics::evaluate_scores(target_scores, nontarget_scores);
  std::printf("EER %.4f DCF0.01 %.4f DCF0.001 %.4f\n", 100.0 * m.eer,
              m.min_dcf_p01, m.min_dcf_p001);
  return 0;
}

int run_params(const std::string& config_path) {
  const sev::Config cfg = sev::parse_config_file(config_path);
  sev::Model<float> model = sev::build_model<float>(cfg.model);
  std::size_t total = 0;
  for (const auto& c : sev::parameter_breakdown(model.params)) {
    std::printf("%-36s %12zu\n", c.name.c_str(), c.count);
    total += c.count;
  }
  std::printf("%-36s %12zu\n", "total", total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speaker embedding toolkit: serialized attention pooling over a TDNN front end"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus, manifests and trial list");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--speakers", synth.cfg.num_speakers, "number of speakers");
  synth_cmd->add_option("--utts", synth.cfg.utts_per_speaker, "utterances per speaker");
  synth_cmd->add_option("--eval-utts", synth.cfg.eval_utts_per_speaker,
                        "held-out utterances per speaker");
  synth_cmd->add_option("--min-frames", synth.cfg.min_frames, "minimum utterance length");
  synth_cmd->add_option("--max-frames", synth.cfg.max_frames, "maximum utterance length");
  synth_cmd->add_option("--dim", synth.cfg.dim, "feature dimension");
  synth_cmd->add_option("--seed", synth.cfg.seed, "random seed");

  std::string config_path, out_path, model_path, manifest_path, emb_dir,
      trials_path, scores_path;
  unsigned threads = std::thread::hardware_concurrency();

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--out", out_path, "checkpoint output path")->required();

  auto* extract_cmd = app.add_subcommand("extract", "extract embeddings for a manifest");
  extract_cmd->add_option("--model", model_path, "model checkpoint")->required();
  extract_cmd->add_option("--manifest", manifest_path, "utterance manifest")->required();
  extract_cmd->add_option("--out", emb_dir, "embedding output directory")->required();
  extract_cmd->add_option("--threads", threads, "worker threads");

  auto* score_cmd = app.add_subcommand("score", "cosine-score a trial list");
  score_cmd->add_option("--embeddings", emb_dir, "embedding directory")->required();
  score_cmd->add_option("--trials", trials_path, "trial list")->required();
  score_cmd->add_option("--out", scores_path, "score file output")->required();

  auto* eval_cmd = app.add_subcommand("eval", "compute EER and minDCF from scores");
  eval_cmd->add_option("--scores", scores_path, "score file")->required();
  eval_cmd->add_option("--trials", trials_path, "trial list")->required();

  auto* params_cmd = app.add_subcommand("params", "print per-component parameter counts");
  params_cmd->add_option("--config", config_path, "config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(config_path, out_path);
    if (extract_cmd->parsed())
      return run_extract(model_path, manifest_path, emb_dir, threads);
    if (score_cmd->parsed()) return run_score(emb_dir, trials_path, scores_path);
    if (eval_cmd->parsed()) return run_eval(scores_path, trials_path);
    if (params_cmd->parsed()) return run_params(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
