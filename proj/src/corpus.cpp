#include "egpg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "egpg/error.hpp"
#include "egpg/util.hpp"

namespace egpg {

using json = nlohmann::json;

Sentence Sentence::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) throw EmptyInputError("sentence has no tokens");
  for (const auto& t : tokens) {
    if (t.empty()) throw EmptyInputError("sentence contains an empty token");
  }
  Sentence s;
  s.tokens_ = std::move(tokens);
  return s;
}

std::string Sentence::text() const { return join(tokens_, " "); }

Sentence tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) throw EmptyInputError("empty input: no tokens after whitespace stripping");
  return Sentence::from_tokens(std::move(tokens));
}

Sentence truncate(const Sentence& s, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("truncate: max_len must be >= 1");
  if (s.size() <= max_len) return s;
  std::vector<std::string> head(s.tokens().begin(), s.tokens().begin() + static_cast<std::ptrdiff_t>(max_len));
  return Sentence::from_tokens(std::move(head));
}

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kSpecials{"<pad>", "<sos>", "<eos>", "<unk>"};
  return kSpecials;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) add(s);
}

void Vocabulary::add(std::string token) {
  auto id = static_cast<TokenId>(id_to_token_.size());
  auto [it, inserted] = token_to_id_.emplace(token, id);
  if (!inserted) throw InputError("duplicate vocabulary token: " + token);
  id_to_token_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> id_to_token) {
  const auto& specials = special_tokens();
  if (id_to_token.size() < kNumSpecials ||
      !std::equal(specials.begin(), specials.end(), id_to_token.begin())) {
    throw InputError("vocabulary must start with <pad> <sos> <eos> <unk>");
  }
  Vocabulary v;
  for (std::size_t i = kNumSpecials; i < id_to_token.size(); ++i) v.add(std::move(id_to_token[i]));
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("egpg-vocab");
  for (const auto& t : id_to_token_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  return hex64(h);
}

Vocabulary build_vocabulary(std::span<const Sentence> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw EmptyInputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens()) ++counts[t];
  }
  const auto& specials = special_tokens();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n < min_freq) continue;
    if (std::find(specials.begin(), specials.end(), tok) != specials.end()) continue;
    ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ids(specials.begin(), specials.end());
  for (auto& [tok, n] : ranked) ids.push_back(tok);
  return Vocabulary::from_tokens(std::move(ids));
}

IdSequence encode(const Sentence& s, const Vocabulary& v, bool add_eos) {
  IdSequence ids;
  ids.reserve(s.size() + (add_eos ? 1 : 0));
  for (const auto& t : s.tokens()) ids.push_back(v.id(t));
  if (add_eos) ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& v) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad || id == Vocabulary::kSos) continue;
    out.push_back(v.token(id));
  }
  return out;
}

RecordFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".tsv" ? RecordFormat::kTsv : RecordFormat::kJsonl;
}

namespace {

struct RawRecord {
  std::string source, target, exemplar;
  bool has_exemplar = false;
};

// Returns nullopt for a malformed line (after throwing in strict mode).
std::optional<RawRecord> parse_record(const std::string& line, RecordFormat format,
                                      const std::filesystem::path& path, std::size_t line_no,
                                      bool strict) {
  auto fail = [&](const std::string& why) -> std::optional<RawRecord> {
    if (strict) throw ParseError(path.string(), line_no, why);
    log_warning(path.string() + ":" + std::to_string(line_no) + ": skipping malformed record (" + why + ")");
    return std::nullopt;
  };
  RawRecord rec;
  if (format == RecordFormat::kTsv) {
    auto cols = split(line, '\t');
    if (cols.size() < 2 || cols.size() > 3) return fail("expected 2 or 3 tab-separated columns");
    rec.source = cols[0];
    rec.target = cols[1];
    if (cols.size() == 3) {
      rec.exemplar = cols[2];
      rec.has_exemplar = true;
    }
    return rec;
  }
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    return fail(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) return fail("record is not a JSON object");
  auto get = [&](const char* key, std::string& out) -> bool {
    auto it = j.find(key);
    if (it == j.end()) return false;
    if (!it->is_string()) return false;
    out = it->get<std::string>();
    return true;
  };
  if (!get("source", rec.source) || !get("target", rec.target)) {
    return fail("missing string field \"source\" or \"target\"");
  }
  rec.has_exemplar = get("exemplar", rec.exemplar);
  return rec;
}

std::optional<Sentence> try_sentence(const std::string& text, std::size_t max_len) {
  if (trim(text).empty()) return std::nullopt;
  return truncate(tokenize(text), max_len);
}

}  // namespace

LoadResult load_triples(const std::filesystem::path& path, RecordFormat format,
                        const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path.string());
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto rec = parse_record(line, format, path, line_no, options.strict);
    if (!rec) {
      ++result.skipped;
      continue;
    }
    auto src = try_sentence(rec->source, options.max_len);
    auto tgt = try_sentence(rec->target, options.max_len);
    std::optional<Sentence> ex;
    if (rec->has_exemplar) ex = try_sentence(rec->exemplar, options.max_len);
    bool missing_exemplar = options.require_exemplar && !ex;
    bool present_but_empty = rec->has_exemplar && !ex;
    if (!src || !tgt || missing_exemplar || present_but_empty) {
      ++result.skipped;
      continue;
    }
    result.triples.push_back(Triple{std::move(*src), std::move(*tgt), ex ? std::move(*ex) : Sentence{}});
  }
  if (result.skipped > 0) {
    log_info("skipped " + std::to_string(result.skipped) + " record(s) with empty fields in " + path.string());
  }
  return result;
}

std::vector<SentencePair> load_pairs(const std::filesystem::path& path, RecordFormat format,
                                     const LoadOptions& options, std::size_t* skipped) {
  LoadOptions opts = options;
  opts.require_exemplar = false;
  auto loaded = load_triples(path, format, opts);
  if (skipped) *skipped = loaded.skipped;
  std::vector<SentencePair> pairs;
  pairs.reserve(loaded.triples.size());
  for (auto& t : loaded.triples) pairs.push_back({std::move(t.source), std::move(t.target)});
  return pairs;
}

std::string triple_to_jsonl(const Triple& t) {
  json j;
  j["source"] = t.source.text();
  j["target"] = t.target.text();
  j["exemplar"] = t.exemplar.text();
  return j.dump();
}

void write_triples_jsonl(const std::filesystem::path& path, std::span<const Triple> triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path.string());
  for (const auto& t : triples) out << triple_to_jsonl(t) << '\n';
}

PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocabulary& v, std::size_t d_emb,
                                                std::mt19937_64& rng) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embedding file: " + path.string());
  PretrainedEmbeddings out;
  out.matrix.resize(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(d_emb));
  std::uniform_real_distribution<double> init(-0.1, 0.1);
  for (Eigen::Index r = 0; r < out.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.matrix.cols(); ++c) out.matrix(r, c) = init(rng);
  }
  std::vector<bool> seen(v.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split(std::string(trim(line)), ' ');
    fields.erase(std::remove(fields.begin(), fields.end(), std::string()), fields.end());
    if (fields.empty()) continue;
    if (fields.size() - 1 != d_emb) {
      throw DimensionError(path.string() + ":" + std::to_string(line_no) + ": embedding dimension " +
                           std::to_string(fields.size() - 1) + " does not match configured d_emb " +
                           std::to_string(d_emb));
    }
    if (!v.contains(fields[0])) continue;
    auto id = static_cast<std::size_t>(v.id(fields[0]));
    if (seen[id]) continue;
    for (std::size_t c = 0; c < d_emb; ++c) {
      try {
        out.matrix(static_cast<Eigen::Index>(id), static_cast<Eigen::Index>(c)) = std::stod(fields[c + 1]);
      } catch (const std::exception&) {
        throw ParseError(path.string(), line_no, "non-numeric embedding value");
      }
    }
    seen[id] = true;
    ++out.covered;
  }
  out.coverage = static_cast<double>(out.covered) / static_cast<double>(v.size());
  log_info("pretrained embeddings cover " + std::to_string(out.covered) + "/" + std::to_string(v.size()) +
           " vocabulary entries");
  return out;
}

}  // namespace egpg
