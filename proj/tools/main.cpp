// Command-line front end: synthesize data, train both streams, evaluate
// retrieval, and explain individual pairs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "attreid/adh.hpp"
#include "attreid/data.hpp"
#include "attreid/distances.hpp"
#include "attreid/evaluation.hpp"
#include "attreid/training.hpp"

namespace fs = std::filesystem;
using namespace attreid;

namespace {

int log_level() {
    const char* env = std::getenv("ATTRIB_REID_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[attreid] " << msg << "\n";
}

std::vector<StageSpec> parse_stages(const std::string& s) {
    std::vector<StageSpec> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos) throw InvalidParam("bad stage spec (want CxS,...): " + s);
        out.push_back({std::stoul(item.substr(0, x)), std::stoul(item.substr(x + 1))});
    }
    if (out.empty()) throw InvalidParam("empty stage spec");
    return out;
}

std::string stages_to_string(const std::vector<StageSpec>& stages) {
    std::string out;
    for (const auto& s : stages) {
        if (!out.empty()) out += ",";
        out += std::to_string(s.out_channels) + "x" + std::to_string(s.stride);
    }
    return out;
}

// Model description lines stored in the checkpoint manifest.
std::vector<std::string> model_extras(const BackboneConfig& cfg, std::size_t attrs) {
    return {"stages " + stages_to_string(cfg.stages),
            "input " + std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.input_height) +
                "x" + std::to_string(cfg.input_width),
            "shared " + std::to_string(cfg.shared_stage_count),
            "ids " + std::to_string(cfg.id_count),
            "seed " + std::to_string(cfg.seed),
            "attrs " + std::to_string(attrs)};
}

BackboneConfig config_from_extras(const std::string& checkpoint_dir, std::size_t* attrs_out) {
    BackboneConfig cfg;
    bool have_stages = false;
    for (const auto& line : read_checkpoint_extras(checkpoint_dir)) {
        std::stringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "stages") {
            std::string v;
            ss >> v;
            cfg.stages = parse_stages(v);
            have_stages = true;
        } else if (key == "input") {
            std::string v;
            ss >> v;
            std::stringstream vs(v);
            std::string a, b, c;
            std::getline(vs, a, 'x');
            std::getline(vs, b, 'x');
            std::getline(vs, c, 'x');
            cfg.in_channels = std::stoul(a);
            cfg.input_height = std::stoul(b);
            cfg.input_width = std::stoul(c);
        } else if (key == "shared") {
            ss >> cfg.shared_stage_count;
        } else if (key == "ids") {
            ss >> cfg.id_count;
        } else if (key == "seed") {
            ss >> cfg.seed;
        } else if (key == "attrs" && attrs_out) {
            ss >> *attrs_out;
        }
    }
    if (!have_stages)
        throw IoError("checkpoint has no model description: " + checkpoint_dir);
    return cfg;
}

void echo_config(const std::string& out_dir, const std::map<std::string, std::string>& kv) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "config_echo.txt");
    for (const auto& [k, v] : kv) out << k << " " << v << "\n";
}

// Independent O(n^2) ranking oracle for --oracle runs: counting-based AP
// and CMC, no sorting shared with the library path.
void oracle_check(const DatasetManifest& manifest, const std::vector<std::size_t>& query,
                  const std::vector<std::size_t>& gallery,
                  const std::vector<std::vector<double>>& dist, const EvalReport& report) {
    double ap_sum = 0.0;
    std::size_t valid = 0;
    std::vector<double> cmc(gallery.size(), 0.0);
    for (std::size_t q = 0; q < query.size(); ++q) {
        const auto& qr = manifest.records[query[q]];
        std::vector<std::size_t> cand;
        bool has_match = false;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const auto& gr = manifest.records[gallery[g]];
            if (gr.person_id == qr.person_id && gr.camera_id == qr.camera_id) continue;
            cand.push_back(g);
            if (gr.person_id == qr.person_id) has_match = true;
        }
        if (!has_match) continue;
        ++valid;
        double ap = 0.0;
        std::size_t matches = 0, best_rank = cand.size();
        for (std::size_t g : cand) {
            if (manifest.records[gallery[g]].person_id != qr.person_id) continue;
            // rank of g = number of candidates strictly ahead of it
            std::size_t rank = 0, match_ahead = 0;
            for (std::size_t h : cand) {
                if (h == g) continue;
                const bool ahead = dist[q][h] < dist[q][g] ||
                                   (dist[q][h] == dist[q][g] && gallery[h] < gallery[g]);
                if (ahead) {
                    ++rank;
                    if (manifest.records[gallery[h]].person_id == qr.person_id) ++match_ahead;
                }
            }
            ++matches;
            ap += static_cast<double>(match_ahead + 1) / static_cast<double>(rank + 1);
            best_rank = std::min(best_rank, rank);
        }
        ap /= static_cast<double>(matches);
        ap_sum += ap;
        for (std::size_t k = best_rank; k < cmc.size(); ++k) cmc[k] += 1.0;
    }
    if (valid == 0) throw NoValidQueries("oracle: no valid queries");
    const double oracle_map = ap_sum / static_cast<double>(valid);
    if (std::abs(oracle_map - report.mAP) > 1e-12)
        throw Error("oracle mismatch: mAP " + std::to_string(report.mAP) + " vs " +
                    std::to_string(oracle_map));
    for (std::size_t k = 0; k < cmc.size(); ++k)
        if (std::abs(cmc[k] / static_cast<double>(valid) - report.cmc[k]) > 1e-12)
            throw Error("oracle mismatch: CMC-" + std::to_string(k + 1));
    log_info("oracle check passed (mAP and CMC agree within 1e-12)");
}

struct CommonFlags {
    std::string data_dir;
    std::string schema_path;
    double train_fraction = 0.5;
    std::size_t queries_per_id = 2;
    double gem_p = 3.0;
    double activation_k = 0.5;
    double activation_t = 1.0;
    std::uint64_t seed = 7;
    std::size_t threads = 1;
};

AttributeSchema load_schema(const CommonFlags& c) {
    if (!c.schema_path.empty()) return AttributeSchema::load(c.schema_path);
    const fs::path in_data = fs::path(c.data_dir) / "schema.txt";
    if (!c.data_dir.empty() && fs::exists(in_data)) return AttributeSchema::load(in_data.string());
    return AttributeSchema::default_schema();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attribute-guided explainable person re-identification toolkit"};
    app.require_subcommand(1);

    CommonFlags common;

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic attribute-driven dataset");
    SyntheticSpec spec;
    std::string synth_out;
    bool synth_png = false;
    synth->add_option("--ids", spec.id_count, "identity count")->check(CLI::Range(2, 100000));
    synth->add_option("--images-per-id", spec.images_per_id_per_platform,
                      "images per identity per platform");
    synth->add_option("--height", spec.height, "image height");
    synth->add_option("--width", spec.width, "image width");
    synth->add_option("--noise", spec.noise_level, "noise sigma in [0,1)");
    synth->add_option("--aerial-downscale", spec.aerial_downscale, "aerial pooling factor");
    synth->add_option("--aerial-squash", spec.aerial_squash, "aerial vertical squash (0,1]");
    synth->add_option("--aerial-brightness", spec.aerial_brightness, "aerial brightness shift");
    synth->add_option("--seed", spec.seed, "master seed");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_flag("--png", synth_png, "write PNG images instead of tensor files");
    synth->add_option("--schema", common.schema_path, "attribute schema file");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train stream 1 or stream 2");
    TrainConfig tconf;
    std::string phase = "stream1", train_out, stages_flag = "16x2,32x2,64x2", stream1_dir;
    std::size_t shared_stages = 2;
    std::string optimizer_flag = "adam";
    bool lr_set = false;
    train->add_option("--data", common.data_dir, "dataset directory")->required();
    train->add_option("--phase", phase, "stream1 | stream2")
        ->check(CLI::IsMember({"stream1", "stream2"}));
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--stream1", stream1_dir, "stream-1 checkpoint dir (stream2 phase)");
    train->add_option("--optimizer", optimizer_flag, "adam | sgd")
        ->check(CLI::IsMember({"adam", "sgd"}));
    auto* lr_opt = train->add_option("--lr", tconf.learning_rate, "learning rate");
    train->add_option("--epochs", tconf.epochs, "training epochs");
    train->add_option("--batch-size", tconf.batch_size, "stream-1 images per batch");
    train->add_option("--pairs-per-batch", tconf.pairs_per_batch, "stream-2 identities per batch");
    train->add_option("--alpha", tconf.loss.alpha, "prior loss 1 weight");
    train->add_option("--beta", tconf.loss.beta, "prior loss 2 weight");
    train->add_option("--v", tconf.loss.v, "exclusive-share exponent in (0,1)");
    train->add_option("--margin", tconf.loss.margin, "triplet margin");
    train->add_option("--gem-p", common.gem_p, "GeM pooling exponent");
    train->add_option("--activation-k", common.activation_k, "activation growth factor (0,1)");
    train->add_option("--activation-t", common.activation_t, "activation exponent > 0");
    train->add_option("--stages", stages_flag, "backbone stages, CxS per stage");
    train->add_option("--shared-stages", shared_stages, "stages shared between streams");
    train->add_option("--train-fraction", common.train_fraction, "identity split fraction");
    train->add_option("--queries-per-id", common.queries_per_id, "query images per id/platform");
    train->add_option("--seed", common.seed, "seed for split, init and sampling");
    train->add_option("--threads", common.threads, "worker cap");
    train->add_option("--schema", common.schema_path, "attribute schema file");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "evaluate mAP and CMC-k");
    std::string eval_checkpoint, direction_flag = "a2g", gallery_mode_flag = "cross", eval_out;
    bool oracle = false, dump_ap = false, dump_distances = false;
    eval->add_option("--data", common.data_dir, "dataset directory")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "stream-1 checkpoint dir")->required();
    eval->add_option("--direction", direction_flag, "a2g | g2a | all")
        ->check(CLI::IsMember({"a2g", "g2a", "all"}));
    eval->add_option("--gallery-mode", gallery_mode_flag, "cross | all")
        ->check(CLI::IsMember({"cross", "all"}));
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--gem-p", common.gem_p, "GeM pooling exponent");
    eval->add_option("--train-fraction", common.train_fraction, "identity split fraction");
    eval->add_option("--queries-per-id", common.queries_per_id, "query images per id/platform");
    eval->add_option("--seed", common.seed, "split seed (must match training)");
    eval->add_option("--threads", common.threads, "worker cap");
    eval->add_option("--schema", common.schema_path, "attribute schema file");
    eval->add_flag("--oracle", oracle, "cross-check with the brute-force metric oracle");
    eval->add_flag("--dump-ap", dump_ap, "write per-query average precision");
    eval->add_flag("--dump-distances", dump_distances, "write the distance matrix CSV");

    // ---- explain ----
    auto* explain = app.add_subcommand("explain", "export attention maps and distance shares");
    std::string ex_checkpoint, ex_query, ex_gallery, ex_out;
    explain->add_option("--data", common.data_dir, "dataset directory")->required();
    explain->add_option("--checkpoint", ex_checkpoint,
                        "checkpoint root containing stream1/ and stream2/")
        ->required();
    explain->add_option("--query", ex_query, "query image path (as in the manifest)")->required();
    explain->add_option("--gallery", ex_gallery, "gallery image path")->required();
    explain->add_option("--out", ex_out, "output directory")->required();
    explain->add_option("--gem-p", common.gem_p, "GeM pooling exponent");
    explain->add_option("--activation-k", common.activation_k, "activation growth factor");
    explain->add_option("--activation-t", common.activation_t, "activation exponent");
    explain->add_option("--schema", common.schema_path, "attribute schema file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    lr_set = lr_opt->count() > 0;

    try {
        if (synth->parsed()) {
            spec.validate();
            AttributeSchema schema = load_schema(common);
            log_info("generating synthetic dataset (" + std::to_string(spec.id_count) + " ids)");
            Dataset ds = generate_synthetic(spec, schema);
            save_dataset(synth_out, ds, schema, synth_png);
            echo_config(synth_out, {{"ids", std::to_string(spec.id_count)},
                                    {"images_per_id", std::to_string(spec.images_per_id_per_platform)},
                                    {"height", std::to_string(spec.height)},
                                    {"width", std::to_string(spec.width)},
                                    {"noise", std::to_string(spec.noise_level)},
                                    {"seed", std::to_string(spec.seed)},
                                    {"png", synth_png ? "1" : "0"}});
            log_info("wrote " + std::to_string(ds.images.size()) + " images to " + synth_out);
            return 0;
        }

        if (train->parsed()) {
            AttributeSchema schema = load_schema(common);
            Dataset ds = load_dataset(common.data_dir, schema);
            auto split = split_protocol(ds.manifest, common.train_fraction, common.seed, {},
                                        common.queries_per_id);
            for (const auto& w : split.warnings) log_info("split: " + w);

            tconf.optimizer = parse_optimizer(optimizer_flag);
            if (!lr_set)
                tconf.learning_rate = tconf.optimizer == OptimizerKind::adam ? 1e-4 : 1e-3;
            tconf.gem_p = common.gem_p;
            tconf.activation = ActivationParams(common.activation_k, common.activation_t);
            tconf.seed = common.seed;
            tconf.validate();

            BackboneConfig bcfg;
            bcfg.stages = parse_stages(stages_flag);
            bcfg.shared_stage_count = shared_stages;
            bcfg.input_height = ds.images.at(0).dim(1);
            bcfg.input_width = ds.images.at(0).dim(2);
            bcfg.id_count = std::max<std::size_t>(split.train_ids.size(), 2);
            bcfg.seed = common.seed;

            fs::create_directories(train_out);
            echo_config(train_out,
                        {{"phase", phase},
                         {"optimizer", optimizer_flag},
                         {"lr", std::to_string(tconf.learning_rate)},
                         {"epochs", std::to_string(tconf.epochs)},
                         {"batch_size", std::to_string(tconf.batch_size)},
                         {"pairs_per_batch", std::to_string(tconf.pairs_per_batch)},
                         {"alpha", std::to_string(tconf.loss.alpha)},
                         {"beta", std::to_string(tconf.loss.beta)},
                         {"v", std::to_string(tconf.loss.v)},
                         {"margin", std::to_string(tconf.loss.margin)},
                         {"gem_p", std::to_string(tconf.gem_p)},
                         {"activation_k", std::to_string(common.activation_k)},
                         {"activation_t", std::to_string(common.activation_t)},
                         {"stages", stages_flag},
                         {"shared_stages", std::to_string(shared_stages)},
                         {"train_fraction", std::to_string(common.train_fraction)},
                         {"queries_per_id", std::to_string(common.queries_per_id)},
                         {"seed", std::to_string(common.seed)}});

            if (phase == "stream1") {
                Backbone backbone(bcfg);
                log_info("training stream 1: " + std::to_string(split.train_ids.size()) +
                         " identities, " + std::to_string(tconf.epochs) + " epochs");
                const std::string ckpt = (fs::path(train_out) / "stream1").string();
                train_stream1(ds, split.train_ids, backbone, tconf,
                              (fs::path(train_out) / "stream1_telemetry.csv").string(),
                              [&](const EpochStats& s) {
                                  save_checkpoint(ckpt, backbone.named_parameters(),
                                                  model_extras(bcfg, schema.total_binary_dims()));
                                  if (log_level() >= 2)
                                      std::cerr << "[attreid] epoch " << s.epoch << " loss "
                                                << s.total << "\n";
                              });
                log_info("stream-1 checkpoint: " + ckpt);
            } else {
                const std::string s1 =
                    stream1_dir.empty() ? (fs::path(train_out) / "stream1").string() : stream1_dir;
                if (!fs::exists(fs::path(s1) / "manifest.txt"))
                    throw IoError("stream-2 training needs a stream-1 checkpoint; none found at " +
                                  s1);
                std::size_t attrs = schema.total_binary_dims();
                BackboneConfig loaded_cfg = config_from_extras(s1, &attrs);
                Backbone backbone(loaded_cfg);
                auto params = backbone.named_parameters();
                load_checkpoint(s1, params);
                ExplainableNet net(backbone, schema.total_binary_dims(),
                                   derive_seed(common.seed, 0xdead));
                log_info("training stream 2 against frozen stream 1 at " + s1);
                const std::string ckpt = (fs::path(train_out) / "stream2").string();
                train_stream2(ds, split.train_ids, backbone, net, schema, tconf,
                              (fs::path(train_out) / "stream2_telemetry.csv").string(),
                              [&](const EpochStats& s) {
                                  save_checkpoint(ckpt, net.named_parameters(),
                                                  model_extras(loaded_cfg,
                                                               schema.total_binary_dims()));
                                  if (log_level() >= 2)
                                      std::cerr << "[attreid] epoch " << s.epoch << " loss "
                                                << s.total << " L_d " << s.distillation << "\n";
                              });
                log_info("stream-2 checkpoint: " + ckpt);
            }
            return 0;
        }

        if (eval->parsed()) {
            AttributeSchema schema = load_schema(common);
            Dataset ds = load_dataset(common.data_dir, schema);
            auto split = split_protocol(ds.manifest, common.train_fraction, common.seed, {},
                                        common.queries_per_id);
            std::size_t attrs = 0;
            BackboneConfig bcfg = config_from_extras(eval_checkpoint, &attrs);
            Backbone backbone(bcfg);
            auto params = backbone.named_parameters();
            load_checkpoint(eval_checkpoint, params);

            auto embeddings = compute_embeddings(backbone, ds, common.gem_p, common.threads);
            const Direction direction = parse_direction(direction_flag);
            const GalleryMode mode =
                gallery_mode_flag == "all" ? GalleryMode::all : GalleryMode::cross;
            auto sets = direction_filter(ds.manifest, split.query, split.gallery, direction, mode);
            if (sets.gallery.empty()) throw EmptyGallery("gallery is empty after filtering");
            auto dist = distance_matrix(embeddings, sets.query, sets.gallery, common.threads);
            auto report =
                evaluate_matrix(ds.manifest, sets.query, sets.gallery, dist, dump_ap);

            fs::create_directories(eval_out);
            write_report((fs::path(eval_out) / "report.txt").string(),
                         (fs::path(eval_out) / "report.csv").string(), direction_flag, report);
            if (dump_distances)
                write_distance_matrix_csv((fs::path(eval_out) / "distances.csv").string(),
                                          ds.manifest, sets.query, sets.gallery, dist);
            if (dump_ap) {
                std::ofstream ap(fs::path(eval_out) / "per_query_ap.csv");
                ap.precision(17);
                ap << "query,ap\n";
                for (const auto& r : report.rankings)
                    ap << ds.manifest.records[r.query_index].image_path << ","
                       << r.average_precision << "\n";
            }
            if (oracle) oracle_check(ds.manifest, sets.query, sets.gallery, dist, report);
            echo_config(eval_out, {{"direction", direction_flag},
                                   {"gallery_mode", gallery_mode_flag},
                                   {"gem_p", std::to_string(common.gem_p)},
                                   {"seed", std::to_string(common.seed)},
                                   {"train_fraction", std::to_string(common.train_fraction)},
                                   {"queries_per_id", std::to_string(common.queries_per_id)}});
            log_info("mAP " + std::to_string(report.mAP) + ", CMC-1 " +
                     std::to_string(report.cmc_at(1)));
            return 0;
        }

        if (explain->parsed()) {
            AttributeSchema schema = load_schema(common);
            Dataset ds = load_dataset(common.data_dir, schema);
            const std::string s1 = (fs::path(ex_checkpoint) / "stream1").string();
            const std::string s2 = (fs::path(ex_checkpoint) / "stream2").string();
            if (!fs::exists(fs::path(s2) / "manifest.txt"))
                throw IoError("explain needs a stream-2 checkpoint; none found at " + s2);
            std::size_t attrs = schema.total_binary_dims();
            BackboneConfig bcfg = config_from_extras(s1, &attrs);
            Backbone backbone(bcfg);
            auto params = backbone.named_parameters();
            load_checkpoint(s1, params);
            ExplainableNet net(backbone, schema.total_binary_dims(), 0);
            auto net_params = net.named_parameters();
            load_checkpoint(s2, net_params);

            auto find_record = [&](const std::string& path) {
                for (std::size_t i = 0; i < ds.manifest.records.size(); ++i)
                    if (ds.manifest.records[i].image_path == path) return i;
                throw UnknownImage("image not in manifest: " + path);
            };
            const std::size_t qi = find_record(ex_query);
            const std::size_t gi = find_record(ex_gallery);

            const ActivationParams act(common.activation_k, common.activation_t);
            Tensor Fq = backbone.forward_reid(ds.images[qi]).values;
            Tensor Fg = backbone.forward_reid(ds.images[gi]).values;
            Tensor Aq = net.forward_attention(ds.images[qi], act);
            Tensor Ag = net.forward_attention(ds.images[gi], act);

            fs::create_directories(ex_out);
            Aq.save((fs::path(ex_out) / "aam_query.atrt").string());
            Ag.save((fs::path(ex_out) / "aam_gallery.atrt").string());
            for (auto& [name, A] : {std::pair<std::string, Tensor*>{"query", &Aq},
                                    {"gallery", &Ag}}) {
                std::ofstream csv(fs::path(ex_out) / ("aam_" + name + "_summary.csv"));
                csv.precision(17);
                csv << "k,attribute_name,mean_activation\n";
                const std::size_t n_sp = A->dim(1) * A->dim(2);
                for (std::size_t k = 0; k < A->dim(0); ++k) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n_sp; ++i) s += (*A)[k * n_sp + i];
                    csv << k << "," << schema.dim_name(k) << "," << s / static_cast<double>(n_sp)
                        << "\n";
                }
            }

            auto decomp = attribute_distances(Fq, Fg, Aq, Ag, common.gem_p);
            decomp.d = pairwise_distance(gem_pool(Var::constant(Fq), common.gem_p).value(),
                                         gem_pool(Var::constant(Fg), common.gem_p).value());
            auto pair = pairwise_xor(
                encode(schema, ds.manifest.attribute_table.at(ds.manifest.records[qi].person_id)),
                encode(schema, ds.manifest.attribute_table.at(ds.manifest.records[gi].person_id)));
            decomp.exclusive_indices = pair.exclusive_indices;
            decomp.common_indices = pair.common_indices;
            write_decomposition_csv((fs::path(ex_out) / "decomposition.csv").string(), schema,
                                    decomp);
            {
                std::ofstream summary(fs::path(ex_out) / "pair_summary.csv");
                summary.precision(17);
                summary << "d,d_hat,L_d,M_E,degenerate\n";
                summary << decomp.d << "," << decomp.d_hat << ","
                        << std::abs(decomp.d - decomp.d_hat) << "," << pair.exclusive_count << ","
                        << (decomp.d_hat == 0.0 ? 1 : 0) << "\n";
            }
            log_info("explanation bundle written to " + ex_out);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
