#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xmodal/contrastive.hpp"
#include "xmodal/sequence.hpp"

namespace xmodal {

// JSON-lines dataset formats.
//
// A sequence serializes as {"text": [ids], "images": [[[f,...],...], ...]}
// with the canonical layout: all images (in order), then all text tokens.
// Writers reject sequences that are not in canonical layout.
//
// A contrastive instance line is
//   {"task_id": t, "ids": {"query": q, "positive": p, "negatives": [..]},
//    "query": seq, "positive": seq, "negatives": [seq, ..]}
//
// A retrieval task file mixes three line kinds:
//   {"kind": "query", "id": .., "seq": ..}
//   {"kind": "doc", "id": .., "seq": ..}
//   {"kind": "judgment", "query_id": .., "relevant": [..]}

std::string sequence_to_json_line(const InterleavedSequence& seq);
InterleavedSequence sequence_from_json_line(const std::string& line, int d_patch);

void save_instances_jsonl(const std::string& path, const std::vector<ContrastiveInstance>& xs);
std::vector<ContrastiveInstance> load_instances_jsonl(const std::string& path, int d_patch);

struct RetrievalTask {
    std::string name;
    std::vector<std::pair<std::string, InterleavedSequence>> queries;
    std::vector<std::pair<std::string, InterleavedSequence>> pool;
    std::map<std::string, std::set<std::string>> judgments;  // query id -> relevant doc ids

    // Every judged doc id must exist in the pool and every query must have at
    // least one relevant document.
    void validate() const;
};

void save_task_jsonl(const std::string& path, const RetrievalTask& task);
RetrievalTask load_task_jsonl(const std::string& path, int d_patch);

// Attribute answer key for oracle evaluation: one line per query/document id
// with the generating attribute tuples.
struct AnswerKeyEntry {
    std::string id;
    std::vector<std::array<int, 3>> tuples;  // (shape, color, count)
};

void save_answer_key(const std::string& path, const std::vector<AnswerKeyEntry>& entries);
std::map<std::string, AnswerKeyEntry> load_answer_key(const std::string& path);

}  // namespace xmodal
