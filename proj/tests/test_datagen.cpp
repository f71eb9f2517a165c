#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "testutil.hpp"
#include "xmodal/datagen.hpp"

using namespace xmodal;

namespace {

SynthSpec small_spec() {
    SynthSpec spec;
    spec.vocab_size = 48;
    spec.grid_side = 3;
    spec.d_patch = 6;
    spec.n_shapes = 6;
    spec.n_colors = 6;
    spec.n_counts = 6;
    spec.caption_train = 40;
    spec.caption_eval = 8;
    spec.text_train = 24;
    spec.text_eval = 6;
    spec.longform_train = 12;
    spec.longform_eval = 4;
    spec.hard_negatives = 2;
    spec.seed = 99;
    return spec;
}

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Recovers the attribute tuple named by a caption from the vocabulary layout.
AttributeTuple parse_caption(const SynthSpec& spec, const InterleavedSequence& seq) {
    AttributeTuple t{-1, -1, -1};
    for (int i = 0; i < seq.length(); ++i) {
        if (!seq.is_text(i)) continue;
        const int id = seq.token_at(i);
        const int s0 = special::kFirstFree;
        if (id >= s0 && id < s0 + spec.n_shapes) t.shape = id - s0;
        else if (id >= s0 + spec.n_shapes && id < s0 + spec.n_shapes + spec.n_colors)
            t.color = id - s0 - spec.n_shapes;
        else if (id >= s0 + spec.n_shapes + spec.n_colors && id < spec.first_filler_word())
            t.count = id - s0 - spec.n_shapes - spec.n_colors;
    }
    return t;
}

}  // namespace

TEST_CASE("generation is byte-identical across runs with the same seed") {
    const auto spec = small_spec();
    const std::string d1 = "/tmp/xmodal_gen_a";
    const std::string d2 = "/tmp/xmodal_gen_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    const auto c1 = generate_corpus(spec, d1);
    const auto c2 = generate_corpus(spec, d2);

    REQUIRE(c1.train_files.size() == 3);
    for (size_t i = 0; i < c1.train_files.size(); ++i)
        CHECK(read_bytes(c1.train_files[i]) == read_bytes(c2.train_files[i]));
    CHECK(read_bytes(c1.answer_key_file) == read_bytes(c2.answer_key_file));
    for (size_t i = 0; i < c1.eval_task_files.size(); ++i)
        CHECK(read_bytes(c1.eval_task_files[i]) == read_bytes(c2.eval_task_files[i]));

    // a different seed produces different data
    auto spec2 = spec;
    spec2.seed = 100;
    const std::string d3 = "/tmp/xmodal_gen_c";
    std::filesystem::remove_all(d3);
    const auto c3 = generate_corpus(spec2, d3);
    CHECK(read_bytes(c1.train_files[0]) != read_bytes(c3.train_files[0]));
}

TEST_CASE("captions name exactly the attributes of their positive image") {
    const auto spec = small_spec();
    const std::string dir = "/tmp/xmodal_gen_key";
    std::filesystem::remove_all(dir);
    const auto corpus = generate_corpus(spec, dir);
    const auto key = load_answer_key(corpus.answer_key_file);
    const auto instances = load_instances_jsonl(dir + "/caption_pairs.jsonl", spec.d_patch);
    REQUIRE(instances.size() == static_cast<size_t>(spec.caption_train));

    const ImageRenderer renderer(spec, derive_seed(spec.seed, "render"));
    for (const auto& z : instances) {
        // caption tokens parse back to the answer-key tuple
        const auto t = parse_caption(spec, z.query);
        const auto& kq = key.at(z.query_id).tuples;
        REQUIRE(kq.size() == 1);
        CHECK(t.shape == kq[0][0]);
        CHECK(t.color == kq[0][1]);
        CHECK(t.count == kq[0][2]);

        // the stored image equals a fresh render of the key tuple
        const auto& kd = key.at(z.positive_id).tuples;
        CHECK(kd[0] == kq[0]);
        const auto pixels = renderer.render({kd[0][0], kd[0][1], kd[0][2]});
        int at = 0;
        for (int i = 0; i < z.positive.length(); ++i) {
            const auto pv = z.positive.patch_at(i);
            for (double v : pv) CHECK(v == pixels[static_cast<size_t>(at++)]);
        }
    }
}

TEST_CASE("hard negatives share exactly one attribute with the positive") {
    const auto spec = small_spec();
    const std::string dir = "/tmp/xmodal_gen_negs";
    std::filesystem::remove_all(dir);
    const auto corpus = generate_corpus(spec, dir);
    const auto key = load_answer_key(corpus.answer_key_file);

    for (const char* file : {"/caption_pairs.jsonl", "/text_pairs.jsonl"}) {
        const auto instances = load_instances_jsonl(dir + file, spec.d_patch);
        for (const auto& z : instances) {
            const auto& pos = key.at(z.positive_id).tuples[0];
            for (const auto& nid : z.negative_ids) {
                const auto& neg = key.at(nid).tuples[0];
                const AttributeTuple a{pos[0], pos[1], pos[2]};
                const AttributeTuple b{neg[0], neg[1], neg[2]};
                CHECK(a.shared_attributes(b) == 1);  // shares one, differs in two
            }
        }
    }

    // long-form negatives keep one tuple and perturb the other
    const auto lf = load_instances_jsonl(dir + "/longform_docs.jsonl", spec.d_patch);
    for (const auto& z : lf) {
        const auto& pos = key.at(z.positive_id).tuples;
        for (const auto& nid : z.negative_ids) {
            const auto& neg = key.at(nid).tuples;
            REQUIRE(neg.size() == 2);
            CHECK((neg[0] == pos[0] || neg[1] == pos[1]));
            CHECK(!(neg[0] == pos[0] && neg[1] == pos[1]));
        }
    }
}

TEST_CASE("positives are unique per category and eval tasks validate") {
    const auto spec = small_spec();
    const std::string dir = "/tmp/xmodal_gen_unique";
    std::filesystem::remove_all(dir);
    const auto corpus = generate_corpus(spec, dir);
    const auto key = load_answer_key(corpus.answer_key_file);

    std::set<std::array<int, 3>> caption_tuples;
    const auto instances = load_instances_jsonl(dir + "/caption_pairs.jsonl", spec.d_patch);
    for (const auto& z : instances)
        CHECK(caption_tuples.insert(key.at(z.positive_id).tuples[0]).second);

    for (const auto& tf : corpus.eval_task_files) {
        const auto task = load_task_jsonl(tf, spec.d_patch);
        task.validate();
        CHECK(!task.queries.empty());
        CHECK(task.pool.size() == task.queries.size());
    }
}

TEST_CASE("too-small attribute spaces fail generation") {
    auto spec = small_spec();
    spec.n_shapes = 2;
    spec.n_colors = 2;
    spec.n_counts = 2;  // 8 combinations for 48 caption instances
    CHECK_THROWS_AS(generate_corpus(spec, "/tmp/xmodal_gen_overflow"), data_error);
}

TEST_CASE("instances survive a JSONL round trip") {
    const auto spec = small_spec();
    const std::string dir = "/tmp/xmodal_gen_rt";
    std::filesystem::remove_all(dir);
    generate_corpus(spec, dir);
    const auto a = load_instances_jsonl(dir + "/longform_docs.jsonl", spec.d_patch);
    save_instances_jsonl(dir + "/roundtrip.jsonl", a);
    const auto b = load_instances_jsonl(dir + "/roundtrip.jsonl", spec.d_patch);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].query == b[i].query);
        CHECK(a[i].positive == b[i].positive);
        CHECK(a[i].query_id == b[i].query_id);
        CHECK(a[i].negatives.size() == b[i].negatives.size());
        for (size_t k = 0; k < a[i].negatives.size(); ++k)
            CHECK(a[i].negatives[k] == b[i].negatives[k]);
    }
}

TEST_CASE("flattening keeps the document first and the query text after it") {
    const auto spec = small_spec();
    const std::string dir = "/tmp/xmodal_gen_flat";
    std::filesystem::remove_all(dir);
    generate_corpus(spec, dir);
    const auto instances = load_instances_jsonl(dir + "/caption_pairs.jsonl", spec.d_patch);
    const auto& z = instances.front();
    const auto flat = flatten_for_pretraining(z);
    CHECK(flat.length() == z.positive.length() + z.query.length());
    for (int i = 0; i < z.positive.length(); ++i) CHECK(flat.is_image(i) == z.positive.is_image(i));
    for (int i = 0; i < z.query.length(); ++i)
        CHECK(flat.token_at(z.positive.length() + i) == z.query.token_at(i));
    flat.validate(spec.vocab_size);

    const auto flipped = flatten_for_pretraining(z, /*doc_first=*/false);
    CHECK(flipped.length() == flat.length());
    for (int i = 0; i < z.query.length(); ++i)
        CHECK(flipped.token_at(i) == z.query.token_at(i));
    flipped.validate(spec.vocab_size);
}

TEST_CASE("non-canonical sequences are rejected by the serializer") {
    InterleavedSequence seq(3);
    seq.append_token(5);
    std::vector<double> data(3, 0.1);
    seq.append_image(data, 1);  // image after text: not canonical
    CHECK_THROWS_AS(sequence_to_json_line(seq), data_error);
}
