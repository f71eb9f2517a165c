#include "xmodal/dataset.hpp"

#include <fstream>

#include <json.hpp>

namespace xmodal {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json sequence_to_json(const InterleavedSequence& seq) {
    ordered_json images = ordered_json::array();
    ordered_json text = ordered_json::array();
    bool text_seen = false;
    int cur_image = -1;
    ordered_json cur_patches = ordered_json::array();
    for (int i = 0; i < seq.length(); ++i) {
        if (seq.is_text(i)) {
            text_seen = true;
            if (cur_image >= 0) {
                images.push_back(std::move(cur_patches));
                cur_patches = ordered_json::array();
                cur_image = -1;
            }
            text.push_back(seq.token_at(i));
        } else {
            if (text_seen)
                throw data_error(
                    "sequence is not in canonical layout (images then text); cannot serialize");
            const int img = seq.image_index_at(i);
            if (img != cur_image) {
                if (cur_image >= 0) {
                    images.push_back(std::move(cur_patches));
                    cur_patches = ordered_json::array();
                }
                cur_image = img;
            }
            auto pv = seq.patch_at(i);
            cur_patches.push_back(std::vector<double>(pv.begin(), pv.end()));
        }
    }
    if (cur_image >= 0) images.push_back(std::move(cur_patches));
    ordered_json j;
    j["text"] = std::move(text);
    j["images"] = std::move(images);
    return j;
}

InterleavedSequence sequence_from_json(const json& j, int d_patch) {
    InterleavedSequence seq(d_patch);
    if (!j.contains("text") || !j.contains("images"))
        throw data_error("sequence object needs 'text' and 'images' fields");
    for (const auto& image : j.at("images")) {
        std::vector<double> data;
        int n = 0;
        for (const auto& patch : image) {
            if (static_cast<int>(patch.size()) != d_patch)
                throw data_error("patch width " + std::to_string(patch.size()) +
                                 " does not match d_patch " + std::to_string(d_patch));
            for (const auto& v : patch) data.push_back(v.get<double>());
            ++n;
        }
        if (n > 0) seq.append_image(data, n);
    }
    for (const auto& id : j.at("text")) seq.append_token(id.get<int>());
    return seq;
}

ordered_json instance_to_json(const ContrastiveInstance& z) {
    ordered_json ids;
    ids["query"] = z.query_id;
    ids["positive"] = z.positive_id;
    ids["negatives"] = z.negative_ids;
    ordered_json j;
    j["task_id"] = z.task_id;
    j["ids"] = std::move(ids);
    j["query"] = sequence_to_json(z.query);
    j["positive"] = sequence_to_json(z.positive);
    ordered_json negs = ordered_json::array();
    for (const auto& n : z.negatives) negs.push_back(sequence_to_json(n));
    j["negatives"] = std::move(negs);
    return j;
}

ContrastiveInstance instance_from_json(const json& j, int d_patch) {
    ContrastiveInstance z;
    z.task_id = j.at("task_id").get<std::string>();
    const auto& ids = j.at("ids");
    z.query_id = ids.at("query").get<std::string>();
    z.positive_id = ids.at("positive").get<std::string>();
    z.negative_ids = ids.at("negatives").get<std::vector<std::string>>();
    z.query = sequence_from_json(j.at("query"), d_patch);
    z.positive = sequence_from_json(j.at("positive"), d_patch);
    for (const auto& n : j.at("negatives")) z.negatives.push_back(sequence_from_json(n, d_patch));
    z.validate();
    return z;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw data_error("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open: " + path);
    return is;
}

}  // namespace

std::string sequence_to_json_line(const InterleavedSequence& seq) {
    return sequence_to_json(seq).dump();
}

InterleavedSequence sequence_from_json_line(const std::string& line, int d_patch) {
    return sequence_from_json(json::parse(line), d_patch);
}

void save_instances_jsonl(const std::string& path, const std::vector<ContrastiveInstance>& xs) {
    auto os = open_out(path);
    for (const auto& z : xs) os << instance_to_json(z).dump() << "\n";
}

std::vector<ContrastiveInstance> load_instances_jsonl(const std::string& path, int d_patch) {
    auto is = open_in(path);
    std::vector<ContrastiveInstance> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json(json::parse(line), d_patch));
        } catch (const json::exception& e) {
            throw data_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void RetrievalTask::validate() const {
    std::set<std::string> pool_ids;
    for (const auto& [id, seq] : pool) {
        if (!pool_ids.insert(id).second) throw data_error("duplicate pool doc id: " + id);
    }
    std::set<std::string> query_ids;
    for (const auto& [id, seq] : queries) {
        if (!query_ids.insert(id).second) throw data_error("duplicate query id: " + id);
    }
    for (const auto& [qid, rel] : judgments) {
        if (!query_ids.count(qid)) throw data_error("judgment for unknown query: " + qid);
        for (const auto& did : rel)
            if (!pool_ids.count(did))
                throw data_error("judged doc " + did + " is not in the pool");
    }
    for (const auto& [qid, seq] : queries) {
        auto it = judgments.find(qid);
        if (it == judgments.end() || it->second.empty())
            throw data_error("query " + qid + " has no relevant document");
    }
}

void save_task_jsonl(const std::string& path, const RetrievalTask& task) {
    auto os = open_out(path);
    for (const auto& [id, seq] : task.queries) {
        ordered_json j;
        j["kind"] = "query";
        j["id"] = id;
        j["seq"] = json::parse(sequence_to_json_line(seq));
        os << j.dump() << "\n";
    }
    for (const auto& [id, seq] : task.pool) {
        ordered_json j;
        j["kind"] = "doc";
        j["id"] = id;
        j["seq"] = json::parse(sequence_to_json_line(seq));
        os << j.dump() << "\n";
    }
    for (const auto& [qid, rel] : task.judgments) {
        ordered_json j;
        j["kind"] = "judgment";
        j["query_id"] = qid;
        j["relevant"] = std::vector<std::string>(rel.begin(), rel.end());
        os << j.dump() << "\n";
    }
}

RetrievalTask load_task_jsonl(const std::string& path, int d_patch) {
    auto is = open_in(path);
    RetrievalTask task;
    task.name = path;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "query") {
                task.queries.emplace_back(j.at("id").get<std::string>(),
                                          sequence_from_json(j.at("seq"), d_patch));
            } else if (kind == "doc") {
                task.pool.emplace_back(j.at("id").get<std::string>(),
                                       sequence_from_json(j.at("seq"), d_patch));
            } else if (kind == "judgment") {
                auto& rel = task.judgments[j.at("query_id").get<std::string>()];
                for (const auto& d : j.at("relevant")) rel.insert(d.get<std::string>());
            } else {
                throw data_error("unknown line kind: " + kind);
            }
        } catch (const json::exception& e) {
            throw data_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return task;
}

void save_answer_key(const std::string& path, const std::vector<AnswerKeyEntry>& entries) {
    auto os = open_out(path);
    for (const auto& e : entries) {
        ordered_json tuples = ordered_json::array();
        for (const auto& t : e.tuples) {
            ordered_json a;
            a["shape"] = t[0];
            a["color"] = t[1];
            a["count"] = t[2];
            tuples.push_back(std::move(a));
        }
        ordered_json j;
        j["id"] = e.id;
        j["attributes"] = std::move(tuples);
        os << j.dump() << "\n";
    }
}

std::map<std::string, AnswerKeyEntry> load_answer_key(const std::string& path) {
    auto is = open_in(path);
    std::map<std::string, AnswerKeyEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        AnswerKeyEntry e;
        e.id = j.at("id").get<std::string>();
        for (const auto& a : j.at("attributes"))
            e.tuples.push_back({a.at("shape").get<int>(), a.at("color").get<int>(),
                                a.at("count").get<int>()});
        out[e.id] = std::move(e);
    }
    return out;
}

}  // namespace xmodal
