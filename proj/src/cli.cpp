#include "dedgan/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "dedgan/errors.hpp"
#include "dedgan/evaluation.hpp"
#include "dedgan/shapemodel.hpp"

namespace dedgan {
namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& where, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError(where + ": invalid value '" + text + "'");
  return v;
}

struct Key {
  std::string section, name;
  std::function<void(RunConfig&, const std::string& where, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Field>
Key number_key(std::string section, std::string name, Field field) {
  return Key{std::move(section), std::move(name),
             [field](RunConfig& c, const std::string& where, const std::string& v) {
               field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_number<T>(where, v));
             },
             [field](const RunConfig& c) {
               auto& mut = const_cast<RunConfig&>(c);
               if constexpr (std::is_floating_point_v<T>)
                 return format_double(static_cast<double>(field(mut)));
               else
                 return std::to_string(field(mut));
             }};
}

#define DEDGAN_FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"data", "source",
                 [](RunConfig& c, const std::string& where, const std::string& v) {
                   if (v != "synthetic" && v != "directory")
                     throw ConfigError(where + ": expected synthetic or directory, got '" + v + "'");
                   c.data_source = v;
                 },
                 [](const RunConfig& c) { return c.data_source; }});
    k.push_back({"data", "manifest", [](RunConfig& c, const std::string&, const std::string& v) { c.manifest = v; },
                 [](const RunConfig& c) { return c.manifest.string(); }});
    k.push_back(number_key<unsigned long long>("data", "seed", DEDGAN_FIELD(c.data_seed)));
    k.push_back(number_key<long long>("data", "identities", DEDGAN_FIELD(c.synthetic.identities)));
    k.push_back(number_key<long long>("data", "train_per_identity", DEDGAN_FIELD(c.synthetic.train_per_identity)));
    k.push_back(number_key<long long>("data", "heldout_per_identity", DEDGAN_FIELD(c.synthetic.heldout_per_identity)));
    k.push_back(number_key<long long>("data", "source_size", DEDGAN_FIELD(c.synthetic.source_size)));
    k.push_back(number_key<double>("data", "max_yaw", DEDGAN_FIELD(c.synthetic.max_yaw_degrees)));
    k.push_back(number_key<double>("data", "noise_std", DEDGAN_FIELD(c.synthetic.noise_std)));

    k.push_back({"model", "profile",
                 [](RunConfig& c, const std::string& where, const std::string& v) {
                   if (v != c.profile)
                     throw ConfigError(where + ": profile '" + v + "' conflicts with the selected profile '" +
                                       c.profile + "'");
                 },
                 [](const RunConfig& c) { return c.profile; }});
    k.push_back(number_key<long long>("model", "image_size", DEDGAN_FIELD(c.train.arch.image_size)));
    k.push_back(number_key<long long>("model", "feature_dim", DEDGAN_FIELD(c.train.arch.feature_dim)));
    k.push_back(number_key<long long>("model", "noise_dim", DEDGAN_FIELD(c.train.arch.noise_dim)));
    k.push_back(number_key<long long>("model", "code_dim", DEDGAN_FIELD(c.train.arch.code_dim)));
    k.push_back(number_key<long long>("model", "pose_classes", DEDGAN_FIELD(c.train.arch.pose_classes)));
    k.push_back(number_key<double>("model", "init_stddev", DEDGAN_FIELD(c.train.arch.init_stddev)));

    k.push_back(number_key<unsigned long long>("train", "steps", DEDGAN_FIELD(c.train.steps)));
    k.push_back(number_key<long long>("train", "batch_size", DEDGAN_FIELD(c.train.batch_size)));
    k.push_back(number_key<unsigned long long>("train", "seed", DEDGAN_FIELD(c.train.seed)));
    k.push_back(
        number_key<unsigned long long>("train", "checkpoint_interval", DEDGAN_FIELD(c.train.checkpoint_interval)));
    k.push_back(number_key<double>("train", "learning_rate", DEDGAN_FIELD(c.train.adam.learning_rate)));
    k.push_back(number_key<double>("train", "adam_beta1", DEDGAN_FIELD(c.train.adam.beta1)));
    k.push_back(number_key<double>("train", "adam_beta2", DEDGAN_FIELD(c.train.adam.beta2)));
    k.push_back(number_key<double>("train", "adam_epsilon", DEDGAN_FIELD(c.train.adam.epsilon)));
    k.push_back(number_key<double>("train", "lambda_adv", DEDGAN_FIELD(c.train.weights.lambda.adv)));
    k.push_back(number_key<double>("train", "lambda_id", DEDGAN_FIELD(c.train.weights.lambda.id)));
    k.push_back(number_key<double>("train", "lambda_pose", DEDGAN_FIELD(c.train.weights.lambda.pose)));
    k.push_back(number_key<double>("train", "lambda_pixel", DEDGAN_FIELD(c.train.weights.lambda.pixel)));
    k.push_back(number_key<double>("train", "mu_adv", DEDGAN_FIELD(c.train.weights.mu.adv)));
    k.push_back(number_key<double>("train", "mu_id", DEDGAN_FIELD(c.train.weights.mu.id)));
    k.push_back(number_key<double>("train", "mu_pose", DEDGAN_FIELD(c.train.weights.mu.pose)));
    k.push_back(number_key<double>("train", "mu_pixel", DEDGAN_FIELD(c.train.weights.mu.pixel)));
    k.push_back(number_key<double>("train", "k0", DEDGAN_FIELD(c.train.equilibrium.k)));
    k.push_back(number_key<double>("train", "lambda_k", DEDGAN_FIELD(c.train.equilibrium.lambda_k)));
    k.push_back(number_key<double>("train", "beta", DEDGAN_FIELD(c.train.equilibrium.beta)));
    k.push_back(number_key<long long>("train", "eta", DEDGAN_FIELD(c.train.equilibrium.eta)));
    k.push_back(number_key<double>("train", "code_min", DEDGAN_FIELD(c.train.code_min)));
    k.push_back(number_key<double>("train", "code_max", DEDGAN_FIELD(c.train.code_max)));

    k.push_back(number_key<long long>("eval", "bins", DEDGAN_FIELD(c.bins)));
    k.push_back(number_key<long long>("eval", "folds", DEDGAN_FIELD(c.folds)));
    k.push_back(number_key<long long>("eval", "pairs_per_class", DEDGAN_FIELD(c.pairs_per_class)));
    k.push_back(number_key<long long>("eval", "fid_dims", DEDGAN_FIELD(c.fid_dims)));
    k.push_back(number_key<long long>("eval", "sweep_codes", DEDGAN_FIELD(c.sweep_codes)));
    k.push_back(number_key<unsigned long long>("eval", "z_seed", DEDGAN_FIELD(c.z_seed)));
    k.push_back({"eval", "variants",
                 [](RunConfig& c, const std::string& where, const std::string& v) {
                   c.variants.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item.erase(0, item.find_first_not_of(" \t"));
                     item.erase(item.find_last_not_of(" \t") + 1);
                     if (item.empty()) continue;
                     try {
                       variant_from_name(item);
                     } catch (const Error&) {
                       throw ConfigError(where + ": unknown variant '" + item + "'");
                     }
                     c.variants.push_back(item);
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& v : c.variants) out += (out.empty() ? "" : ",") + v;
                   return out;
                 }});
    k.push_back({"eval", "oracle", [](RunConfig& c, const std::string&, const std::string& v) { c.oracle = v; },
                 [](const RunConfig& c) { return c.oracle.string(); }});
    k.push_back(number_key<long long>("eval", "oracle_steps", DEDGAN_FIELD(c.oracle_steps)));
    return k;
  }();
  return keys;
}

#undef DEDGAN_FIELD

}  // namespace

RunConfig RunConfig::defaults(const std::string& profile) {
  RunConfig c;
  if (profile != "desk" && profile != "paper") throw ConfigError("unknown profile '" + profile + "'");
  c.profile = profile;
  c.train.arch = ArchConfig::from_profile(profile, c.synthetic.identities);
  c.synthetic.image_size = c.train.arch.image_size;
  c.synthetic.source_size = profile == "paper" ? 100 : 36;
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const std::string& profile_override) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::string profile = profile_override;
  if (profile.empty()) profile = tree.get<std::string>("model.profile", "desk");
  RunConfig c = defaults(profile);

  std::map<std::pair<std::string, std::string>, const Key*> index;
  for (const auto& key : key_table()) index[{key.section, key.name}] = &key;
  for (const auto& [section, node] : tree) {
    if (section != "data" && section != "model" && section != "train" && section != "eval")
      throw ConfigError(path.string() + ": unknown section [" + section + "]");
    if (node.empty() && !node.data().empty())
      throw ConfigError(path.string() + ": key '" + section + "' outside a section");
    for (const auto& [name, value] : node) {
      auto it = index.find({section, name});
      const std::string where = path.string() + ": [" + section + "] " + name;
      if (it == index.end()) throw ConfigError(path.string() + ": unknown key '" + name + "' in [" + section + "]");
      it->second->set(c, where, value.get_value<std::string>());
    }
  }
  c.synthetic.image_size = c.train.arch.image_size;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (data_source == "directory" && manifest.empty()) throw ConfigError("[data] source = directory needs a manifest");
  if (data_source == "synthetic") synthetic.validate();
  if (bins < 1) throw ConfigError("[eval] bins must be positive");
  if (folds < 2) throw ConfigError("[eval] folds must be at least 2");
  if (pairs_per_class < 1) throw ConfigError("[eval] pairs_per_class must be positive");
  if (fid_dims < 1) throw ConfigError("[eval] fid_dims must be positive");
  if (sweep_codes < 1) throw ConfigError("[eval] sweep_codes must be positive");
  if (oracle_steps < 1) throw ConfigError("[eval] oracle_steps must be positive");
  TrainConfig t = train;
  t.arch.identities = std::max<Index>(t.arch.identities, 2);
  t.validate();
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string current;
  for (const auto& key : key_table()) {
    if (key.section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << key.section << "]\n";
      current = key.section;
    }
    const std::string v = key.get(*this);
    if (v.empty()) continue;
    out << key.name << " = " << v << '\n';
  }
  return out.str();
}

Dataset load_dataset(const RunConfig& config) {
  if (config.data_source == "directory") return load_directory(config.manifest);
  return generate_synthetic(config.synthetic, config.data_seed);
}

namespace {

struct Globals {
  std::string config_path;
  std::string profile;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::string checkpoint;
  std::string out;
};

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("output directory is in use (remove " + path_.string() + " if stale)");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

TensorF stack(const std::vector<TensorF>& images) {
  const Index c = images.front().dim(0), h = images.front().dim(1), w = images.front().dim(2);
  TensorF out({static_cast<Index>(images.size()), c, h, w});
  for (std::size_t i = 0; i < images.size(); ++i)
    out.vec().segment(static_cast<Index>(i) * c * h * w, c * h * w) = images[i].vec();
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled pose-conditioned face generation"};
  app.require_subcommand(1);
  Globals g;
  auto* config_opt = app.add_option("--config", g.config_path, "INI configuration file");
  app.add_option("--profile", g.profile, "Model profile")->check(CLI::IsMember({"desk", "paper"}));
  auto* seed_opt = app.add_option("--seed", g.seed, "Training seed");
  auto* steps_opt = app.add_option("--steps", g.steps, "Training steps");
  app.add_option("--checkpoint", g.checkpoint, "Checkpoint to resume from or evaluate");
  app.add_option("--out", g.out, "Output directory (default: $DEDGAN_OUT or ./dedgan_out)");

  auto* train_cmd = app.add_subcommand("train", "Train a model");

  auto* synth_cmd = app.add_subcommand("synth", "Sweep the pose code for one image");
  std::string synth_input;
  std::size_t synth_index = 0;
  int synth_codes = 0;
  std::string synth_oracle;
  auto* input_opt = synth_cmd->add_option("--input", synth_input, "PPM image");
  auto* index_opt = synth_cmd->add_option("--index", synth_index, "Dataset sample index");
  input_opt->excludes(index_opt);
  synth_cmd->add_option("--codes", synth_codes, "Number of pose codes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--oracle", synth_oracle, "Pose oracle file");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model");
  std::string protocol;
  std::string embeddings;
  std::string fid_against = "generated";
  eval_cmd->add_option("protocol", protocol, "fid | rank1 | verify | ablate")
      ->required()
      ->check(CLI::IsMember({"fid", "rank1", "verify", "ablate"}));
  eval_cmd->add_option("--embeddings", embeddings, "CSV of identity,feature... rows for verify");
  eval_cmd->add_option("--against", fid_against, "FID comparison set")
      ->check(CLI::IsMember({"generated", "real"}));

  auto* fit_cmd = app.add_subcommand("fit-shapemodel", "Fit a shape model to manifest landmarks");
  std::string manifest;
  fit_cmd->add_option("manifest", manifest, "Manifest file")->required();

  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic dataset to disk");
  auto* oracle_cmd = app.add_subcommand("train-oracle", "Train the pose oracle");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig config = *config_opt ? RunConfig::load(g.config_path, g.profile)
                                    : RunConfig::defaults(g.profile.empty() ? "desk" : g.profile);
    if (*seed_opt) config.train.seed = g.seed;
    if (*steps_opt) config.train.steps = g.steps;
    config.validate();

    fs::path out_dir = g.out;
    if (out_dir.empty()) {
      const char* env = std::getenv("DEDGAN_OUT");
      out_dir = env && *env ? fs::path(env) : fs::path("dedgan_out");
    }
    RunLock lock(out_dir);
    write_text(out_dir / "resolved_config.ini", config.to_ini());

    if (*train_cmd) {
      Dataset data = load_dataset(config);
      const bool resume = !g.checkpoint.empty();
      TrainingState state = [&] {
        if (resume) return load_checkpoint(g.checkpoint);
        TrainConfig tc = config.train;
        tc.arch.identities = data.identities;
        return initial_state(tc);
      }();
      if (resume)
        state.config.steps = config.train.steps;
      else
        fs::remove(out_dir / "train_log.jsonl");
      TrainOptions opts;
      opts.log_path = out_dir / "train_log.jsonl";
      if (state.config.checkpoint_interval > 0) opts.checkpoint_dir = out_dir / "checkpoints";
      fs::create_directories(out_dir / "checkpoints");
      if (!resume) {
        TrainingState initial = state;
        save_checkpoint(initial, out_dir / "checkpoints" / "step_000000.ckpt");
      }
      const LossReport last = train(state, data, opts);
      save_checkpoint(state, out_dir / "final.ckpt");
      out << "trained " << state.step << " steps; k = " << format_double(last.k) << '\n';
      return 0;
    }

    if (*synth_cmd) {
      if (g.checkpoint.empty()) throw ArgumentError("synth needs --checkpoint");
      TrainingState state = load_checkpoint(g.checkpoint);
      const Index t = state.config.arch.image_size;
      TensorF image;
      if (!synth_input.empty()) {
        TensorF full = preprocess(read_ppm(synth_input));
        if (full.dim(1) < t || full.dim(2) < t)
          throw ArgumentError("input image is smaller than " + std::to_string(t) + " pixels");
        image = center_crop(full, t);
      } else {
        Dataset data = load_dataset(config);
        const std::size_t idx = *index_opt ? synth_index : data.split("gallery").front();
        if (idx >= data.samples.size()) throw ArgumentError("--index out of range");
        image = center_crop(data.samples[idx].image, t);
      }
      const int k = synth_codes > 0 ? synth_codes : config.sweep_codes;
      const std::vector<double> codes =
          k == 1 ? std::vector<double>{0.5 * (state.config.code_min + state.config.code_max)}
                 : code_grid(state.config.code_min, state.config.code_max, k);
      std::optional<PoseOracle> oracle;
      const fs::path oracle_path = !synth_oracle.empty() ? fs::path(synth_oracle) : config.oracle;
      if (!oracle_path.empty()) oracle = PoseOracle::load(oracle_path);
      PoseSweep sweep = pose_sweep(state.generator, image, codes, config.z_seed, oracle ? &*oracle : nullptr);
      write_ppm(sweep_grid(sweep.images), out_dir / "sweep.ppm");
      for (std::size_t i = 0; i < codes.size(); ++i) {
        out << "code " << format_double(codes[i]);
        if (oracle) out << " yaw " << format_double(sweep.oracle_yaw[i]);
        out << '\n';
      }
      if (oracle && codes.size() > 1) out << "spearman " << format_double(sweep.spearman) << '\n';
      return 0;
    }

    if (*eval_cmd) {
      if (protocol == "ablate") {
        Dataset data = load_dataset(config);
        TrainConfig tc = config.train;
        tc.arch.identities = data.identities;
        std::vector<AblationVariant> variants;
        for (const auto& v : config.variants) variants.push_back(variant_from_name(v));
        AblationTable table = run_ablation(tc, data, variants, config.bins);
        write_ablation_csv(table, out_dir / "ablation.csv");
        write_text(out_dir / "ablation.json", ablation_json(table));
        for (const auto& row : table.rows)
          out << row.variant << " rank1 " << format_double(row.rank1.average) << (row.finite ? "" : " (non-finite)")
              << '\n';
        return 0;
      }
      if (protocol == "verify" && !embeddings.empty()) {
        std::ifstream in(embeddings);
        if (!in) throw ArgumentError("cannot read " + embeddings);
        std::vector<int> ids;
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::stringstream ss(line);
          std::string cell;
          std::getline(ss, cell, ',');
          ids.push_back(parse_number<int>(embeddings, cell));
          rows.emplace_back();
          while (std::getline(ss, cell, ',')) rows.back().push_back(parse_number<double>(embeddings, cell));
          if (rows.back().size() != rows.front().size() || rows.back().empty())
            throw ArgumentError(embeddings + ": inconsistent embedding width");
        }
        if (rows.empty()) throw ArgumentError(embeddings + ": no embeddings");
        Eigen::MatrixXd e(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < rows[i].size(); ++j) e(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        VerificationProtocol proto =
            make_verification_protocol(ids, config.folds, config.pairs_per_class, config.train.seed);
        VerificationResult r = verification_accuracy(proto, e);
        write_verification_csv(r, out_dir / "verify.csv");
        write_text(out_dir / "verify.json", verification_json(r));
        out << "verification " << format_double(100 * r.mean) << " +- " << format_double(100 * r.stddev) << '\n';
        return 0;
      }

      if (g.checkpoint.empty()) throw ArgumentError("eval " + protocol + " needs --checkpoint");
      TrainingState state = load_checkpoint(g.checkpoint);
      Dataset data = load_dataset(config);
      if (data.identities != state.config.arch.identities)
        throw ConfigError("dataset has " + std::to_string(data.identities) + " identities, model expects " +
                          std::to_string(state.config.arch.identities));
      const Index t = state.config.arch.image_size;

      if (protocol == "rank1") {
        Rank1Result r = evaluate_rank1(state.generator, data, state.config.code_min, state.config.code_max, config.bins);
        write_rank1_csv(r, out_dir / "rank1.csv");
        write_text(out_dir / "rank1.json", rank1_json(r));
        out << "rank1 average " << format_double(r.average) << " overall " << format_double(r.overall) << '\n';
        return 0;
      }
      if (protocol == "verify") {
        std::vector<std::size_t> idx = data.split("gallery");
        const auto& probes = data.split("probe");
        idx.insert(idx.end(), probes.begin(), probes.end());
        std::vector<int> ids;
        for (auto i : idx) ids.push_back(data.samples[i].identity);
        Eigen::MatrixXd e = extract_features(state.generator, data, idx);
        VerificationProtocol proto =
            make_verification_protocol(ids, config.folds, config.pairs_per_class, config.train.seed);
        VerificationResult r = verification_accuracy(proto, e);
        write_verification_csv(r, out_dir / "verify.csv");
        write_text(out_dir / "verify.json", verification_json(r));
        out << "verification " << format_double(100 * r.mean) << " +- " << format_double(100 * r.stddev) << '\n';
        return 0;
      }
      // fid
      const auto& train_idx = data.split("train");
      std::vector<TensorF> crops;
      for (auto i : train_idx) crops.push_back(center_crop(data.samples[i].image, t));
      const TensorF real = stack(crops);
      TensorF other = real;
      if (fid_against == "generated") {
        RngStream rng(config.z_seed);
        const Index n = real.dim(0);
        TensorF codes({n, 1}), noise({n, state.config.arch.noise_dim});
        for (Index i = 0; i < n; ++i) codes[i] = static_cast<float>(rng.uniform(state.config.code_min, state.config.code_max));
        for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<float>(rng.normal());
        other = state.generator
                    .forward(VarF(real), VarF(codes), VarF(noise), ForwardMode::eval())
                    .value();
      }
      FidReport r = fid(flatten_images(real), flatten_images(other), config.fid_dims);
      write_text(out_dir / "fid.json", fid_json(r));
      write_text(out_dir / "fid.csv", "fid,dims,real,generated\n" + format_double(r.value) + "," +
                                          std::to_string(r.dims) + "," + std::to_string(r.real_count) + "," +
                                          std::to_string(r.generated_count) + "\n");
      out << "fid " << format_double(r.value) << " (" << r.feature_function << ")\n";
      return 0;
    }

    if (*fit_cmd) {
      Dataset data = load_directory(manifest);
      save_shape_model(data.shape_model, out_dir / "shape_model.bin");
      out << "shape model with " << data.shape_model.components() << " components from " << data.samples.size()
          << " shapes\n";
      return 0;
    }

    if (*gen_cmd) {
      Dataset data = generate_synthetic(config.synthetic, config.data_seed);
      write_dataset(data, out_dir / "dataset");
      save_shape_model(data.shape_model, out_dir / "dataset" / "shape_model.bin");
      out << "wrote " << data.samples.size() << " samples to " << (out_dir / "dataset").string() << '\n';
      return 0;
    }

    if (*oracle_cmd) {
      PoseOracle::Options o;
      o.image_size = config.train.arch.image_size;
      o.source_size = config.synthetic.source_size;
      o.max_yaw_degrees = config.synthetic.max_yaw_degrees;
      o.steps = config.oracle_steps;
      if (*seed_opt) o.seed = g.seed;
      PoseOracle oracle = PoseOracle::train(o);
      oracle.save(out_dir / "oracle.bin");
      out << "oracle held-out MAE " << format_double(oracle.heldout_mae()) << " train MAE "
          << format_double(oracle.train_mae()) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const IngestionError& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dedgan
