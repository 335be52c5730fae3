#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxbias/corpus.hpp"
#include "ctxbias/train.hpp"

namespace ctxbias {

// Line-delimited self-describing records (one JSON object per line).
// Every file starts with a {"type":"header", ...} line carrying at least
// config_hash and seed so outputs are auditable.

std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl_atomic(const std::string& path,
                        const std::vector<nlohmann::json>& lines);

// Stable 64-bit hash of a JSON document (canonical dump order).
uint64_t hash_json(const nlohmann::json& j);

// Corpus files: header (split, channel params, hash, seed) + one record per
// utterance with fields session_id, t, obs, noise, ref, teacher_hyp.
void write_corpus(const std::string& path, const Corpus& corpus,
                  uint64_t config_hash, uint64_t seed);
Corpus read_corpus(const std::string& path);

// Preference-pair files: header records threshold, history source, window
// size N, and the pair count.
void write_pairs(const std::string& path, const std::vector<PreferencePair>& pairs,
                 double threshold, ContextSource source, int n, uint64_t config_hash,
                 uint64_t seed);
std::vector<PreferencePair> read_pairs(const std::string& path);

}  // namespace ctxbias
