#include "xmodal/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "xmodal/checkpoint.hpp"
#include "xmodal/packing.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw data_error("cannot open for writing: " + path);
    return os;
}

std::vector<ContrastiveInstance> load_training_instances(const RunConfig& cfg,
                                                         const std::string& data_dir,
                                                         bool text_on, bool longform_on) {
    std::vector<std::string> files{data_dir + "/caption_pairs.jsonl"};
    if (text_on) files.push_back(data_dir + "/text_pairs.jsonl");
    if (longform_on) files.push_back(data_dir + "/longform_docs.jsonl");
    std::vector<ContrastiveInstance> all;
    for (const auto& f : files) {
        if (!fs::exists(f)) throw data_error("dataset file missing: " + f);
        auto part = load_instances_jsonl(f, cfg.backbone.d_patch);
        for (auto& z : part) all.push_back(std::move(z));
    }
    if (all.empty()) throw data_error("no training instances found in " + data_dir);
    return all;
}

// Endless deterministic index stream with per-epoch reshuffling.
class EpochStream {
public:
    EpochStream(size_t n, uint64_t seed) : n_(n), seed_(seed) { refill(); }

    std::vector<int> next(int k) {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(k));
        while (out.size() < static_cast<size_t>(k)) {
            if (at_ == order_.size()) refill();
            out.push_back(order_[at_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(n_);
        for (size_t i = 0; i < n_; ++i) order_[i] = static_cast<int>(i);
        Rng rng(derive_seed(seed_, "epoch", epoch_++));
        rng.shuffle(order_);
        at_ = 0;
    }
    size_t n_;
    uint64_t seed_;
    uint64_t epoch_ = 0;
    std::vector<int> order_;
    size_t at_ = 0;
};

void check_structural_match(const BackboneConfig& ck, const BackboneConfig& cfg) {
    std::string diff;
    auto cmp = [&diff](const char* field, int a, int b) {
        if (a != b)
            diff += std::string("  ") + field + ": checkpoint " + std::to_string(a) +
                    ", config " + std::to_string(b) + "\n";
    };
    cmp("d_model", ck.d_model, cfg.d_model);
    cmp("n_layers", ck.n_layers, cfg.n_layers);
    cmp("n_heads", ck.n_heads, cfg.n_heads);
    cmp("d_ff", ck.d_ff, cfg.d_ff);
    cmp("vocab_size", ck.vocab_size, cfg.vocab_size);
    cmp("d_patch", ck.d_patch, cfg.d_patch);
    cmp("max_t", ck.max_t, cfg.max_t);
    if (!diff.empty()) throw data_error("checkpoint/config shape mismatch:\n" + diff);
}

template <typename Real>
void run_cpt(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
    const auto instances = load_training_instances(cfg, data_dir, true, true);
    std::vector<InterleavedSequence> corpus;
    corpus.reserve(instances.size());
    for (const auto& z : instances) corpus.push_back(flatten_for_pretraining(z));

    auto state = CptState<Real>::init(cfg.backbone, cfg.cpt, cfg.seed);
    fs::create_directories(out_dir);
    auto metrics_os = open_out(out_dir + "/" + kCptMetricsFile);

    EpochStream stream(corpus.size(), derive_seed(cfg.seed, "cpt-order"));
    const CostModel cost_model{cfg.cost_gamma};
    uint64_t mask_counter = 0;
    for (int step = 0; step < cfg.cpt.steps; ++step) {
        const auto idx = stream.next(cfg.cpt.batch_size);
        std::vector<MaskedSequence> masked;
        masked.reserve(idx.size());
        for (int i : idx) {
            const auto& seq = corpus[static_cast<size_t>(i)];
            const uint64_t mseed = derive_seed(cfg.seed, "cpt-mask", mask_counter++);
            const MaskPlan plan = make_mask_plan(seq, cfg.cpt.p_mlm, cfg.cpt.r_mae, mseed);
            Rng apply_rng(derive_seed(mseed, "apply"));
            masked.push_back(apply_masks(seq, plan, apply_rng));
        }
        std::vector<const MaskedSequence*> batch;
        std::vector<const InterleavedSequence*> batch_seqs;
        for (const auto& m : masked) {
            batch.push_back(&m);
            batch_seqs.push_back(&m.corrupted);
        }
        const auto bins = pack(batch_seqs, cfg.cpt.workers, cost_model).bins();
        const auto m = cpt_train_step(state, batch, &bins);

        ordered_json j;
        j["step"] = m.step;
        j["loss"] = m.loss;
        j["loss_mlm"] = m.loss_mlm;
        j["loss_mae"] = m.loss_mae;
        j["grad_norm"] = m.grad_norm;
        j["lr"] = m.lr;
        metrics_os << j.dump() << "\n";
        if ((step + 1) % 100 == 0 || step + 1 == cfg.cpt.steps)
            log_info("cpt step " + std::to_string(m.step) + " loss " + std::to_string(m.loss));
    }

    Checkpoint ck;
    ck.header = backbone_config_to_fields(cfg.backbone);
    ck.header.emplace_back("components", "backbone,mlm_head,mae_decoder");
    ck.header.emplace_back("mlm_tied", cfg.cpt.tie_mlm_head ? "1" : "0");
    append_tensors(ck, state.backbone.registry());
    append_tensors(ck, state.head.registry());
    append_tensors(ck, state.decoder.registry());
    ck.save(out_dir + "/" + kCptCheckpointFile);
}

template <typename Real>
void run_finetune(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const std::string& init_checkpoint) {
    const auto instances =
        load_training_instances(cfg, data_dir, cfg.text_pairs_on, cfg.longform_pairs_on);

    auto state = ClState<Real>::init(cfg.backbone, cfg.cl, cfg.seed);
    if (!init_checkpoint.empty()) {
        const Checkpoint ck = Checkpoint::load(init_checkpoint);
        check_structural_match(backbone_config_from_header(ck), cfg.backbone);
        assign_tensors(ck, state.backbone.registry());
    }

    fs::create_directories(out_dir);
    auto metrics_os = open_out(out_dir + "/" + kClMetricsFile);

    uint64_t epoch = 0;
    std::vector<InstanceBatch> batches;
    size_t batch_at = 0;
    for (int step = 0; step < cfg.cl.steps; ++step) {
        if (batch_at == batches.size()) {
            Rng rng(derive_seed(cfg.seed, "cl-epoch", epoch++));
            batches = cfg.cl.task_batching
                          ? task_aware_batches(instances, cfg.cl.batch_size, rng,
                                               cfg.cl.drop_partial)
                          : shuffled_batches(instances, cfg.cl.batch_size, rng,
                                             cfg.cl.drop_partial);
            if (batches.empty()) throw data_error("no batches available for fine-tuning");
            batch_at = 0;
        }
        std::vector<const ContrastiveInstance*> batch;
        for (int i : batches[batch_at++].indices)
            batch.push_back(&instances[static_cast<size_t>(i)]);
        const auto m = cl_train_step(state, batch);

        ordered_json j;
        j["step"] = m.step;
        j["loss"] = m.loss;
        j["cos_pos"] = m.mean_cos_positive;
        j["cos_neg"] = m.mean_cos_negative;
        j["grad_norm"] = m.grad_norm;
        metrics_os << j.dump() << "\n";
        if ((step + 1) % 100 == 0 || step + 1 == cfg.cl.steps)
            log_info("cl step " + std::to_string(m.step) + " loss " + std::to_string(m.loss) +
                     " cos+ " + std::to_string(m.mean_cos_positive) + " cos- " +
                     std::to_string(m.mean_cos_negative));
    }

    Checkpoint ck;
    ck.header = backbone_config_to_fields(cfg.backbone);
    ck.header.emplace_back("components", "backbone");
    append_tensors(ck, state.backbone.registry());
    ck.save(out_dir + "/" + kClCheckpointFile);
}

template <typename Real>
std::vector<TaskResult> run_eval(const Checkpoint& ck, const BackboneConfig& bc,
                                 const std::vector<std::string>& task_files,
                                 const std::string& out_dir, EmbedMode mode) {
    auto params = BackboneParams<Real>::random_init(bc, 0);
    assign_tensors(ck, params.registry());

    fs::create_directories(out_dir);
    auto results_os = open_out(out_dir + "/" + kResultsFile);
    std::vector<TaskResult> results;
    for (const auto& file : task_files) {
        if (!fs::exists(file)) throw data_error("task file missing: " + file);
        RetrievalTask task = load_task_jsonl(file, bc.d_patch);
        const std::string name = fs::path(file).filename().string();
        task.name = name;
        task.validate();
        const auto lists = rank(task, params, mode);

        TaskResult r;
        r.task = name;
        r.p_at_1 = precision_at_1(lists, task.judgments);
        r.ndcg_at_5 = ndcg_at_k(lists, task.judgments, 5);
        r.n_queries = static_cast<int>(lists.size());
        results.push_back(r);

        ordered_json j;
        j["task"] = r.task;
        j["p_at_1"] = r.p_at_1;
        j["ndcg_at_5"] = r.ndcg_at_5;
        j["n_queries"] = r.n_queries;
        results_os << j.dump() << "\n";
        std::cout << j.dump() << "\n";

        auto detail_os = open_out(out_dir + "/" + fs::path(file).stem().string() + "_detail.jsonl");
        for (const auto& rl : lists) {
            const auto& rel = task.judgments.at(rl.query_id);
            int first_rel = 0;
            for (size_t r2 = 0; r2 < rl.ranked.size(); ++r2)
                if (rel.count(rl.ranked[r2].first)) {
                    first_rel = static_cast<int>(r2) + 1;
                    break;
                }
            ordered_json d;
            d["query_id"] = rl.query_id;
            d["rank_of_first_relevant"] = first_rel;
            ordered_json top = ordered_json::array();
            for (size_t r2 = 0; r2 < rl.ranked.size() && r2 < 5; ++r2) {
                ordered_json e;
                e["id"] = rl.ranked[r2].first;
                e["score"] = rl.ranked[r2].second;
                top.push_back(std::move(e));
            }
            d["top"] = std::move(top);
            detail_os << d.dump() << "\n";
        }
    }
    return results;
}

}  // namespace

GeneratedCorpus cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    SynthSpec spec = cfg.data;
    spec.seed = derive_seed(cfg.seed, "data");
    return generate_corpus(spec, out_dir);
}

void cmd_cpt(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
    cfg.validate();
    if (cfg.backbone.precision_bits == 64)
        run_cpt<double>(cfg, data_dir, out_dir);
    else
        run_cpt<float>(cfg, data_dir, out_dir);
}

void cmd_finetune(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const std::string& init_checkpoint) {
    cfg.validate();
    if (cfg.backbone.precision_bits == 64)
        run_finetune<double>(cfg, data_dir, out_dir, init_checkpoint);
    else
        run_finetune<float>(cfg, data_dir, out_dir, init_checkpoint);
}

std::vector<TaskResult> cmd_eval(const std::string& checkpoint_path,
                                 const std::vector<std::string>& task_files,
                                 const std::string& out_dir, const std::string& mode_override) {
    const Checkpoint ck = Checkpoint::load(checkpoint_path);
    const BackboneConfig bc = backbone_config_from_header(ck);
    EmbedMode mode = bc.attention_mode == AttentionMode::causal ? EmbedMode::causal_eos
                                                                : EmbedMode::bidirectional_mean;
    if (!mode_override.empty()) mode = embed_mode_from_string(mode_override);
    if (bc.precision_bits == 64) return run_eval<double>(ck, bc, task_files, out_dir, mode);
    return run_eval<float>(ck, bc, task_files, out_dir, mode);
}

int cmd_embed(const std::string& checkpoint_path, const std::string& input_path,
              const std::string& mode_string, const std::string& out_path) {
    const Checkpoint ck = Checkpoint::load(checkpoint_path);
    const BackboneConfig bc = backbone_config_from_header(ck);
    EmbedMode mode = bc.attention_mode == AttentionMode::causal ? EmbedMode::causal_eos
                                                                : EmbedMode::bidirectional_mean;
    if (!mode_string.empty()) mode = embed_mode_from_string(mode_string);

    std::ifstream is(input_path);
    if (!is) throw data_error("cannot open input: " + input_path);
    auto os = open_out(out_path);

    auto params32 = BackboneParams<float>::random_init(bc, 0);
    auto params64 = BackboneParams<double>::random_init(bc, 0);
    if (bc.precision_bits == 64)
        assign_tensors(ck, params64.registry());
    else
        assign_tensors(ck, params32.registry());

    int bad_lines = 0;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string id = j.at("id").get<std::string>();
            const InterleavedSequence seq =
                sequence_from_json_line(j.at("seq").dump(), bc.d_patch);
            std::vector<double> e;
            if (bc.precision_bits == 64) {
                const auto emb = embed_sequence(seq, params64, mode);
                for (Eigen::Index c = 0; c < emb.vector.cols(); ++c)
                    e.push_back(emb.vector(0, c));
            } else {
                const auto emb = embed_sequence(seq, params32, mode);
                for (Eigen::Index c = 0; c < emb.vector.cols(); ++c)
                    e.push_back(static_cast<double>(emb.vector(0, c)));
            }
            ordered_json out;
            out["id"] = id;
            out["embedding"] = e;
            os << out.dump() << "\n";
        } catch (const std::exception& ex) {
            ++bad_lines;
            log_warn(input_path + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return bad_lines;
}

}  // namespace xmodal
