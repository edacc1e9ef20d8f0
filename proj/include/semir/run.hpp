#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semir/common.hpp"
#include "semir/corpus.hpp"

namespace semir {

struct RankedDoc {
    std::string doc_id;
    double score = 0.0;
};

struct RankedSnippet {
    Snippet snippet;
    double score = 0.0;
    /// Known when the snippet came from the ranker; absent after reading a file.
    std::optional<std::size_t> sent_index;
};

/// One query's answer: documents and snippets, best first.
struct RunEntry {
    std::string query_id;
    std::string body;
    std::vector<RankedDoc> docs;
    std::vector<RankedSnippet> snippets;
};

class RankedRun {
public:
    void add(RunEntry entry) {
        if (!by_id_.emplace(entry.query_id, entries_.size()).second) {
            throw ValidationError("duplicate query id '" + entry.query_id + "' in run");
        }
        entries_.push_back(std::move(entry));
    }

    const std::vector<RunEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    const RunEntry* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &entries_[it->second];
    }

private:
    std::vector<RunEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Equality over everything the BioASQ file format carries (ids, bodies,
/// document order, snippet text and offsets); scores are not part of it.
inline bool same_payload(const RunEntry& a, const RunEntry& b) {
    if (a.query_id != b.query_id || a.body != b.body || a.docs.size() != b.docs.size() ||
        a.snippets.size() != b.snippets.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        if (a.docs[i].doc_id != b.docs[i].doc_id) {
            return false;
        }
    }
    for (std::size_t i = 0; i < a.snippets.size(); ++i) {
        if (!(a.snippets[i].snippet == b.snippets[i].snippet)) {
            return false;
        }
    }
    return true;
}

inline bool same_payload(const RankedRun& a, const RankedRun& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!same_payload(a.entries()[i], b.entries()[i])) {
            return false;
        }
    }
    return true;
}

}  // namespace semir
