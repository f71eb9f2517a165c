#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "xmodal/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // section.key=value
    uint64_t seed = 0;
    bool seed_set = false;
    bool no_mlm = false, no_mae = false, no_text_pairs = false, no_longform_pairs = false,
         no_task_batching = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "configuration file (key = value with sections)");
    cmd->add_option("--set", o.overrides, "override a config key, e.g. --set cl.steps=500")
        ->take_all();
    cmd->add_option("--seed", o.seed, "master seed")->each([&o](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_flag("--no-mlm", o.no_mlm, "disable the masked-language term in stage 1");
    cmd->add_flag("--no-mae", o.no_mae, "disable the masked-autoencoding term in stage 1");
    cmd->add_flag("--no-text-pairs", o.no_text_pairs, "drop text-only pairs from fine-tuning");
    cmd->add_flag("--no-longform-pairs", o.no_longform_pairs,
                  "drop long-form document pairs from fine-tuning");
    cmd->add_flag("--no-task-batching", o.no_task_batching, "use plain shuffled batches");
}

xmodal::RunConfig build_config(const CommonOpts& o) {
    xmodal::RunConfig cfg =
        o.config_path.empty() ? xmodal::RunConfig{} : xmodal::RunConfig::from_file(o.config_path);
    for (const auto& kv : o.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw xmodal::config_error("--set expects section.key=value, got: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed_set) cfg.seed = o.seed;
    if (o.no_mlm) cfg.cpt.mlm_on = false;
    if (o.no_mae) cfg.cpt.mae_on = false;
    if (o.no_text_pairs) cfg.text_pairs_on = false;
    if (o.no_longform_pairs) cfg.longform_pairs_on = false;
    if (o.no_task_batching) cfg.cl.task_batching = false;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage multimodal embedding trainer: denoising pre-training followed by "
                 "contrastive fine-tuning on interleaved text/image sequences"};
    app.require_subcommand(1);

    CommonOpts gen_o, cpt_o, ft_o, eval_o;
    std::string gen_out, cpt_data, cpt_out, ft_data, ft_out, ft_init;
    std::string eval_ckpt, eval_out, eval_mode;
    std::vector<std::string> eval_tasks;
    std::string emb_ckpt, emb_in, emb_out, emb_mode;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen, gen_o);
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* cpt = app.add_subcommand("cpt", "stage-1 denoising pre-training");
    add_common(cpt, cpt_o);
    cpt->add_option("--data", cpt_data, "corpus directory from gen-data")->required();
    cpt->add_option("--out", cpt_out, "output directory")->required();

    auto* ft = app.add_subcommand("finetune", "stage-2 contrastive fine-tuning");
    add_common(ft, ft_o);
    ft->add_option("--data", ft_data, "corpus directory from gen-data")->required();
    ft->add_option("--out", ft_out, "output directory")->required();
    ft->add_option("--init-from", ft_init, "stage-1 checkpoint to start from");

    auto* ev = app.add_subcommand("eval", "retrieval evaluation (P@1 and NDCG@5)");
    add_common(ev, eval_o);
    ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    ev->add_option("--task", eval_tasks, "task file(s)")->required()->take_all();
    ev->add_option("--out", eval_out, "output directory")->required();
    ev->add_option("--mode", eval_mode, "embedding mode: bidirectional or causal");

    auto* em = app.add_subcommand("embed", "embed sequences from a JSON-lines file");
    em->add_option("--checkpoint", emb_ckpt, "model checkpoint")->required();
    em->add_option("--input", emb_in, "input JSON-lines ({id, seq} per line)")->required();
    em->add_option("--out", emb_out, "output file")->required();
    em->add_option("--mode", emb_mode, "embedding mode: bidirectional or causal");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const auto cfg = build_config(gen_o);
            const auto corpus = xmodal::cmd_gen_data(cfg, gen_out);
            for (const auto& f : corpus.train_files) std::cout << f << "\n";
            std::cout << corpus.answer_key_file << "\n";
            for (const auto& f : corpus.eval_task_files) std::cout << f << "\n";
        } else if (cpt->parsed()) {
            xmodal::cmd_cpt(build_config(cpt_o), cpt_data, cpt_out);
        } else if (ft->parsed()) {
            xmodal::cmd_finetune(build_config(ft_o), ft_data, ft_out, ft_init);
        } else if (ev->parsed()) {
            xmodal::cmd_eval(eval_ckpt, eval_tasks, eval_out, eval_mode);
        } else if (em->parsed()) {
            const int bad = xmodal::cmd_embed(emb_ckpt, emb_in, emb_mode, emb_out);
            if (bad > 0) {
                std::cerr << bad << " invalid input line(s)\n";
                return kExitData;
            }
        }
    } catch (const xmodal::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const xmodal::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
