#include "ctxbias/records.hpp"

#include <fstream>
#include <sstream>

#include "ctxbias/checkpoint.hpp"

namespace ctxbias {

using nlohmann::json;

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open records file: " + path);
  std::vector<json> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad record: " + e.what());
    }
  }
  return out;
}

void write_jsonl_atomic(const std::string& path, const std::vector<json>& lines) {
  std::string bytes;
  for (const json& j : lines) {
    bytes += j.dump();
    bytes += '\n';
  }
  atomic_write_file(path, bytes);
}

uint64_t hash_json(const json& j) { return fnv1a64(j.dump()); }

void write_corpus(const std::string& path, const Corpus& corpus,
                  uint64_t config_hash, uint64_t seed) {
  std::vector<json> lines;
  lines.push_back({{"type", "header"},
                   {"split", corpus.split},
                   {"q", corpus.channel.q},
                   {"sigma", corpus.channel.sigma},
                   {"topic_density", corpus.channel.topic_density},
                   {"config_hash", config_hash},
                   {"seed", seed}});
  for (const Session& s : corpus.sessions) {
    for (const Utterance& u : s.utts) {
      json rec = {{"type", "utterance"}, {"session_id", u.session_id},
                  {"t", u.t},            {"obs", u.obs},
                  {"noise", u.noise},    {"ref", u.ref},
                  {"topic_bits", s.topic_bits}};
      if (u.has_teacher) rec["teacher_hyp"] = u.teacher_hyp;
      lines.push_back(std::move(rec));
    }
  }
  write_jsonl_atomic(path, lines);
}

Corpus read_corpus(const std::string& path) {
  std::vector<json> lines = read_jsonl(path);
  check(!lines.empty() && lines[0].value("type", "") == "header",
        "corpus file missing header: " + path);
  Corpus corpus;
  const json& h = lines[0];
  corpus.split = h.at("split").get<std::string>();
  corpus.channel.q = h.at("q").get<double>();
  corpus.channel.sigma = h.at("sigma").get<double>();
  corpus.channel.topic_density = h.at("topic_density").get<double>();
  for (size_t i = 1; i < lines.size(); ++i) {
    const json& r = lines[i];
    check(r.value("type", "") == "utterance", "unexpected record in " + path);
    Utterance u;
    u.session_id = r.at("session_id").get<int64_t>();
    u.t = r.at("t").get<int>();
    u.obs = r.at("obs").get<std::vector<int>>();
    u.noise = r.at("noise").get<std::vector<uint64_t>>();
    u.ref = r.at("ref").get<std::vector<int>>();
    if (r.contains("teacher_hyp")) {
      u.teacher_hyp = r.at("teacher_hyp").get<std::vector<int>>();
      u.has_teacher = true;
    }
    if (corpus.sessions.empty() || corpus.sessions.back().id != u.session_id) {
      Session s;
      s.id = u.session_id;
      s.topic_bits = r.at("topic_bits").get<uint32_t>();
      corpus.sessions.push_back(std::move(s));
    }
    check(u.t == static_cast<int>(corpus.sessions.back().utts.size()) + 1,
          "corpus file: utterances out of order in " + path);
    corpus.sessions.back().utts.push_back(std::move(u));
  }
  return corpus;
}

void write_pairs(const std::string& path, const std::vector<PreferencePair>& pairs,
                 double threshold, ContextSource source, int n, uint64_t config_hash,
                 uint64_t seed) {
  std::vector<json> lines;
  lines.push_back({{"type", "header"},
                   {"threshold", threshold},
                   {"source", to_string(source)},
                   {"n", n},
                   {"count", pairs.size()},
                   {"config_hash", config_hash},
                   {"seed", seed}});
  for (const PreferencePair& p : pairs) {
    lines.push_back({{"type", "pair"},
                     {"session_id", p.session_id},
                     {"t", p.t},
                     {"context", p.context_entries},
                     {"source", to_string(p.context_source)},
                     {"y_pos", p.y_pos},
                     {"y_neg", p.y_neg},
                     {"wer", p.wer},
                     {"obs", p.utt.obs},
                     {"noise", p.utt.noise}});
  }
  write_jsonl_atomic(path, lines);
}

std::vector<PreferencePair> read_pairs(const std::string& path) {
  std::vector<json> lines = read_jsonl(path);
  check(!lines.empty() && lines[0].value("type", "") == "header",
        "pair file missing header: " + path);
  std::vector<PreferencePair> out;
  for (size_t i = 1; i < lines.size(); ++i) {
    const json& r = lines[i];
    check(r.value("type", "") == "pair", "unexpected record in " + path);
    PreferencePair p;
    p.session_id = r.at("session_id").get<int64_t>();
    p.t = r.at("t").get<int>();
    p.context_entries = r.at("context").get<std::vector<std::vector<int>>>();
    p.context_source = context_source_from_string(r.at("source").get<std::string>());
    p.y_pos = r.at("y_pos").get<std::vector<int>>();
    p.y_neg = r.at("y_neg").get<std::vector<int>>();
    p.wer = r.at("wer").get<double>();
    p.utt.session_id = p.session_id;
    p.utt.t = p.t;
    p.utt.obs = r.at("obs").get<std::vector<int>>();
    p.utt.noise = r.at("noise").get<std::vector<uint64_t>>();
    p.utt.ref = p.y_pos;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ctxbias
