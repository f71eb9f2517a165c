#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "testutil.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/pipeline.hpp"

using namespace xmodal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

// Small-but-trainable toy configuration for integration runs.
RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.backbone.d_model = 16;
    cfg.backbone.n_layers = 1;
    cfg.backbone.n_heads = 2;
    cfg.backbone.d_ff = 32;
    cfg.backbone.vocab_size = 48;
    cfg.backbone.d_patch = 6;
    cfg.backbone.max_t = 64;
    cfg.data.vocab_size = 48;
    cfg.data.d_patch = 6;
    cfg.data.grid_side = 2;
    cfg.data.n_shapes = 5;
    cfg.data.n_colors = 5;
    cfg.data.n_counts = 5;
    cfg.data.caption_train = 30;
    cfg.data.caption_eval = 6;
    cfg.data.text_train = 20;
    cfg.data.text_eval = 4;
    cfg.data.longform_train = 10;
    cfg.data.longform_eval = 3;
    cfg.cpt.steps = 4;
    cfg.cpt.batch_size = 4;
    cfg.cpt.workers = 2;
    cfg.cpt.learning_rate = 1e-3;
    cfg.cl.steps = 5;
    cfg.cl.batch_size = 6;
    cfg.cl.learning_rate = 1e-3;
    cfg.seed = 5;
    return cfg;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(XMODAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config files parse, override, and reject unknown keys") {
    RunConfig cfg;
    cfg.set("cl.tau", "0.05");
    CHECK(cfg.cl.tau == 0.05);
    cfg.set("ablation.mlm", "false");
    CHECK(!cfg.cpt.mlm_on);
    CHECK_THROWS_AS(cfg.set("cl.unknown", "1"), config_error);
    CHECK_THROWS_AS(cfg.set("cl.tau", "abc"), config_error);

    const auto round = RunConfig::from_text(cfg.to_text());
    CHECK(round.cl.tau == cfg.cl.tau);
    CHECK(round.cpt.mlm_on == cfg.cpt.mlm_on);
    CHECK(round.seed == cfg.seed);

    CHECK_THROWS_AS(RunConfig::from_text("[cl]\ntau\n"), config_error);
    CHECK_THROWS_AS(RunConfig::from_text("tau = 1\n"), config_error);
}

TEST_CASE("gen-data writes the three task files plus the answer key, deterministically") {
    auto cfg = tiny_run_config();
    TempDir d1("xmodal_pipe_gen1"), d2("xmodal_pipe_gen2");
    const auto c1 = cmd_gen_data(cfg, d1.str());
    const auto c2 = cmd_gen_data(cfg, d2.str());
    CHECK(c1.train_files.size() == 3);
    for (const auto& f : c1.train_files) CHECK(fs::exists(f));
    CHECK(fs::exists(c1.answer_key_file));
    for (size_t i = 0; i < c1.train_files.size(); ++i)
        CHECK(read_bytes(c1.train_files[i]) == read_bytes(c2.train_files[i]));
}

TEST_CASE("cpt: metrics stream, toggles, and zero-step checkpoints") {
    auto cfg = tiny_run_config();
    TempDir data("xmodal_pipe_cpt_data"), out("xmodal_pipe_cpt_out");
    cmd_gen_data(cfg, data.str());

    cmd_cpt(cfg, data.str(), out.str());
    const auto metrics = read_jsonl(out.str() + "/" + kCptMetricsFile);
    REQUIRE(metrics.size() == 4);
    for (const auto& m : metrics) {
        CHECK(m.at("loss").get<double>() > 0.0);
        CHECK(m.at("lr").get<double>() == cfg.cpt.learning_rate);
        CHECK(m.at("grad_norm").get<double>() > 0.0);
    }

    // mae off -> loss_mae identically zero, loss == loss_mlm
    auto no_mae = cfg;
    no_mae.cpt.mae_on = false;
    TempDir out2("xmodal_pipe_cpt_nomae");
    cmd_cpt(no_mae, data.str(), out2.str());
    for (const auto& m : read_jsonl(out2.str() + "/" + kCptMetricsFile)) {
        CHECK(m.at("loss_mae").get<double>() == 0.0);
        CHECK(m.at("loss").get<double>() == m.at("loss_mlm").get<double>());
    }

    // steps = 0 -> checkpoint equals the seeded initialization
    auto zero = cfg;
    zero.cpt.steps = 0;
    TempDir out3("xmodal_pipe_cpt_zero");
    cmd_cpt(zero, data.str(), out3.str());
    const Checkpoint ck = Checkpoint::load(out3.str() + "/" + kCptCheckpointFile);
    auto fresh = CptState<float>::init(zero.backbone, zero.cpt, zero.seed);
    const auto reg = fresh.backbone.registry();
    for (const auto* slot : reg) {
        const auto* t = ck.find(slot->name);
        REQUIRE(t != nullptr);
        CHECK((t->array() == slot->value.template cast<float>().array()).all());
    }

    // missing dataset directory
    CHECK_THROWS_AS(cmd_cpt(cfg, "/tmp/xmodal_not_there", out.str()), data_error);
}

TEST_CASE("finetune: toggles filter categories and CPT initialization changes the outcome") {
    auto cfg = tiny_run_config();
    TempDir data("xmodal_pipe_ft_data");
    cmd_gen_data(cfg, data.str());

    TempDir cpt_out("xmodal_pipe_ft_cpt");
    cmd_cpt(cfg, data.str(), cpt_out.str());

    TempDir raw_out("xmodal_pipe_ft_raw");
    cmd_finetune(cfg, data.str(), raw_out.str());
    const auto raw_metrics = read_jsonl(raw_out.str() + "/" + kClMetricsFile);
    REQUIRE(raw_metrics.size() == 5);

    TempDir init_out("xmodal_pipe_ft_init");
    cmd_finetune(cfg, data.str(), init_out.str(),
                 cpt_out.str() + "/" + kCptCheckpointFile);
    const auto init_metrics = read_jsonl(init_out.str() + "/" + kClMetricsFile);
    CHECK(raw_metrics.back().at("loss").get<double>() !=
          init_metrics.back().at("loss").get<double>());

    // category toggles drop instances
    TempDir filt_out("xmodal_pipe_ft_filter");
    auto filtered = cfg;
    filtered.text_pairs_on = false;
    filtered.longform_pairs_on = false;
    cmd_finetune(filtered, data.str(), filt_out.str());
    CHECK(fs::exists(filt_out.str() + "/" + kClCheckpointFile));

    // shape mismatch between checkpoint and config
    auto wrong = cfg;
    wrong.backbone.d_model = 32;
    wrong.backbone.d_ff = 64;
    TempDir bad_out("xmodal_pipe_ft_bad");
    CHECK_THROWS_AS(
        cmd_finetune(wrong, data.str(), bad_out.str(), cpt_out.str() + "/" + kCptCheckpointFile),
        data_error);
}

TEST_CASE("eval writes results and per-query detail, bit-identically on reruns") {
    auto cfg = tiny_run_config();
    TempDir data("xmodal_pipe_ev_data"), train("xmodal_pipe_ev_train");
    const auto corpus = cmd_gen_data(cfg, data.str());
    cmd_finetune(cfg, data.str(), train.str());

    TempDir ev1("xmodal_pipe_ev1"), ev2("xmodal_pipe_ev2");
    const auto r1 = cmd_eval(train.str() + "/" + kClCheckpointFile, corpus.eval_task_files,
                             ev1.str());
    const auto r2 = cmd_eval(train.str() + "/" + kClCheckpointFile, corpus.eval_task_files,
                             ev2.str());
    REQUIRE(r1.size() == corpus.eval_task_files.size());
    CHECK(read_bytes(ev1.str() + "/" + kResultsFile) == read_bytes(ev2.str() + "/" + kResultsFile));
    for (const auto& r : r1) {
        CHECK(r.p_at_1 >= 0.0);
        CHECK(r.ndcg_at_5 <= 1.0);
        CHECK(r.n_queries > 0);
    }
    CHECK(fs::exists(ev1.str() + "/caption_pairs.task_detail.jsonl"));
}

TEST_CASE("embed: empty input, both modes, invalid lines") {
    auto cfg = tiny_run_config();
    TempDir data("xmodal_pipe_em_data"), train("xmodal_pipe_em_train"), out("xmodal_pipe_em_out");
    cmd_gen_data(cfg, data.str());
    auto quick = cfg;
    quick.cl.steps = 1;
    cmd_finetune(quick, data.str(), train.str());
    const std::string ckpt = train.str() + "/" + kClCheckpointFile;

    // empty input -> empty output, no bad lines
    const std::string empty_in = out.str() + "/empty.jsonl";
    std::ofstream(empty_in).close();
    CHECK(cmd_embed(ckpt, empty_in, "", out.str() + "/empty_out.jsonl") == 0);
    CHECK(read_bytes(out.str() + "/empty_out.jsonl").empty());

    // two valid lines and one invalid line
    const std::string in = out.str() + "/in.jsonl";
    {
        std::ofstream os(in);
        os << R"({"id": "a", "seq": {"text": [5, 6], "images": []}})" << "\n";
        os << R"({"id": "b", "seq": {"text": [], "images": [[[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]]]}})"
           << "\n";
        os << R"(not json at all)" << "\n";
    }
    const int bad = cmd_embed(ckpt, in, "bidirectional", out.str() + "/bi.jsonl");
    CHECK(bad == 1);
    const auto bi = read_jsonl(out.str() + "/bi.jsonl");
    REQUIRE(bi.size() == 2);
    CHECK(bi[0].at("embedding").size() == static_cast<size_t>(cfg.backbone.d_model));

    CHECK(cmd_embed(ckpt, in, "causal", out.str() + "/ca.jsonl") == 1);
    const auto ca = read_jsonl(out.str() + "/ca.jsonl");
    CHECK(bi[0].at("embedding") != ca[0].at("embedding"));
}

TEST_CASE("full pipeline reproduces metric files bit-identically under one seed") {
    auto cfg = tiny_run_config();
    auto run_all = [&](const std::string& tag) {
        TempDir root("xmodal_pipe_full_" + tag);
        const std::string data = root.str() + "/data";
        const std::string cpt = root.str() + "/cpt";
        const std::string ft = root.str() + "/ft";
        const std::string ev = root.str() + "/ev";
        const auto corpus = cmd_gen_data(cfg, data);
        cmd_cpt(cfg, data, cpt);
        cmd_finetune(cfg, data, ft, cpt + "/" + kCptCheckpointFile);
        cmd_eval(ft + "/" + kClCheckpointFile, corpus.eval_task_files, ev);
        return std::tuple{read_bytes(cpt + "/" + kCptMetricsFile),
                          read_bytes(ft + "/" + kClMetricsFile),
                          read_bytes(ev + "/" + kResultsFile)};
    };
    CHECK(run_all("a") == run_all("b"));
}

// ---- binary-level checks (exit codes) ----

TEST_CASE("CLI exit codes: usage 1, data errors 2, success 0") {
    TempDir out("xmodal_cli_out");
    CHECK(run_cli("definitely-not-a-command") == 1);
    CHECK(run_cli("gen-data") == 1);  // missing required --out

    // attribute space overflow -> generation error -> exit 2
    CHECK(run_cli("gen-data --out " + out.str() +
                  " --set data.n_shapes=2 --set data.n_colors=2 --set data.n_counts=2") == 2);

    // a tiny verbatim run succeeds end to end
    TempDir data("xmodal_cli_data");
    const std::string common =
        " --set backbone.d_model=16 --set backbone.n_layers=1 --set backbone.n_heads=2"
        " --set backbone.d_ff=32 --set backbone.vocab_size=48 --set backbone.d_patch=6"
        " --set data.grid_side=2 --set data.n_shapes=5 --set data.n_colors=5"
        " --set data.n_counts=5 --set data.caption_train=20 --set data.caption_eval=4"
        " --set data.text_train=10 --set data.text_eval=3 --set data.longform_train=6"
        " --set data.longform_eval=3 --seed 9";
    CHECK(run_cli("gen-data --out " + data.str() + common) == 0);
    TempDir ft("xmodal_cli_ft");
    CHECK(run_cli("finetune --data " + data.str() + " --out " + ft.str() + common +
                  " --set cl.steps=2 --set cl.batch_size=4 --no-task-batching"
                  " --no-longform-pairs") == 0);
    TempDir ev("xmodal_cli_ev");
    CHECK(run_cli("eval --checkpoint " + ft.str() + "/cl_checkpoint.bin --task " + data.str() +
                  "/eval/caption_pairs.task.jsonl --out " + ev.str()) == 0);
    CHECK(fs::exists(ev.str() + "/results.jsonl"));

    // loading a missing checkpoint is a data error
    CHECK(run_cli("eval --checkpoint /tmp/xmodal_no_ck.bin --task " + data.str() +
                  "/eval/caption_pairs.task.jsonl --out " + ev.str()) == 2);
}
