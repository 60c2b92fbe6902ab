#include "hcut/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace hcut {

size_t Vocab::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token(size_t id) const {
  if (id >= id_to_token.size()) throw DataError("vocab: id out of range");
  return id_to_token[id];
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts, size_t min_freq) {
  if (texts.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, size_t> freq;  // ordered map makes the tie rule trivial
  for (const auto& text : texts)
    for (auto& tok : whitespace_tokens(text)) ++freq[tok];

  std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  for (size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  for (auto& [tok, count] : entries) {
    if (count < min_freq) continue;
    v.token_to_id[tok] = v.id_to_token.size();
    v.id_to_token.push_back(tok);
  }
  return v;
}

std::vector<size_t> encode_text(const std::string& text, const Vocab& vocab, size_t max_len) {
  if (max_len < 3) throw ConfigError("encode_text: max_len must be >= 3");
  std::vector<size_t> ids{Vocab::kBos};
  const auto tokens = whitespace_tokens(text);
  for (size_t i = 0; i < tokens.size() && i < max_len - 2; ++i)
    ids.push_back(vocab.lookup(tokens[i]));
  ids.push_back(Vocab::kEos);
  return ids;
}

Example make_example(const std::string& text, size_t label, int64_t id, const Vocab& vocab,
                     size_t max_len, size_t pad_to) {
  Example ex;
  ex.ids = encode_text(text, vocab, max_len);
  ex.mask.assign(ex.ids.size(), 1);
  if (pad_to > ex.ids.size()) {
    ex.ids.resize(pad_to, Vocab::kPad);
    ex.mask.resize(pad_to, 0);
  }
  ex.label = label;
  ex.id = id;
  return ex;
}

size_t TextDataset::num_classes() const {
  size_t mx = 0;
  for (size_t l : labels) mx = std::max(mx, l + 1);
  return mx;
}

TextDataset read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_tsv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("read_tsv: missing header in " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "text\tlabel")
    throw ParseError("read_tsv: expected header 'text<TAB>label' in " + path);

  TextDataset ds;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("read_tsv: line " + std::to_string(line_no) + ": missing tab separator");
    if (line.find('\t', tab + 1) != std::string::npos)
      throw ParseError("read_tsv: line " + std::to_string(line_no) +
                       ": embedded tab in text (tabs are separators)");
    const std::string text = line.substr(0, tab);
    const std::string label_str = line.substr(tab + 1);
    size_t pos = 0;
    long label = 0;
    try {
      label = std::stol(label_str, &pos);
    } catch (const std::exception&) {
      throw ParseError("read_tsv: line " + std::to_string(line_no) + ": bad label");
    }
    if (pos != label_str.size())
      throw ParseError("read_tsv: line " + std::to_string(line_no) + ": bad label");
    if (label < 0)
      throw DataError("read_tsv: line " + std::to_string(line_no) + ": negative label");
    ds.texts.push_back(text);
    ds.labels.push_back(static_cast<size_t>(label));
  }

  // Labels must be contiguous integers from 0.
  const size_t classes = ds.num_classes();
  std::vector<uint8_t> seen(classes, 0);
  for (size_t l : ds.labels) seen[l] = 1;
  for (size_t c = 0; c < classes; ++c)
    if (!seen[c]) throw DataError("read_tsv: label " + std::to_string(c) + " never occurs");
  return ds;
}

void write_tsv(const TextDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_tsv: cannot open " + path);
  out << "text\tlabel\n";
  for (size_t i = 0; i < ds.size(); ++i) {
    if (ds.texts[i].find('\t') != std::string::npos || ds.texts[i].find('\n') != std::string::npos)
      throw DataError("write_tsv: text contains a tab or newline");
    out << ds.texts[i] << '\t' << ds.labels[i] << '\n';
  }
}

void SpuriousSpec::validate() const {
  if (num_classes < 2) throw ConfigError("spurious spec: need at least two classes");
  if (signal_count < 1) throw ConfigError("spurious spec: signal_count must be >= 1");
  if (rho_train < 0.0 || rho_train > 1.0 || rho_ood < 0.0 || rho_ood > 1.0)
    throw ConfigError("spurious spec: rho must lie in [0, 1]");
  if (signal_vocab_per_class < signal_count)
    throw ConfigError("spurious spec: signal vocabulary smaller than signal_count");
  if (neutral_vocab < 1 || spurious_per_class < 1)
    throw ConfigError("spurious spec: empty token pools");
  if (min_content_len > max_content_len)
    throw ConfigError("spurious spec: bad length range");
  if (min_content_len < signal_count + 1)
    throw ConfigError("spurious spec: length range too short for k signals plus spurious token");
}

namespace {

std::string make_sentence(const SpuriousSpec& spec, size_t label, Rng& rng) {
  const size_t content_len =
      spec.min_content_len + rng.uniform_index(spec.max_content_len - spec.min_content_len + 1);

  std::vector<std::string> tokens;
  // k distinct signal tokens of the gold class.
  std::vector<size_t> pool(spec.signal_vocab_per_class);
  for (size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (size_t i = 0; i < spec.signal_count; ++i) {
    const size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
    tokens.push_back("sig" + std::to_string(label) + "_" + std::to_string(pool[i]));
  }
  for (size_t i = tokens.size(); i + 1 < content_len; ++i)
    tokens.push_back("fil_" + std::to_string(rng.uniform_index(spec.neutral_vocab)));

  for (size_t i = tokens.size(); i-- > 1;) std::swap(tokens[i], tokens[rng.uniform_index(i + 1)]);
  return tokens.empty() ? std::string() : [&] {
    std::string s = tokens[0];
    for (size_t i = 1; i < tokens.size(); ++i) s += " " + tokens[i];
    return s;
  }();
}

TextDataset make_split(const SpuriousSpec& spec, size_t split_tag, size_t count, double rho) {
  TextDataset ds;
  for (size_t i = 0; i < count; ++i) {
    Rng rng = Rng::derive(spec.seed, {0x5350u /*'SP'*/, split_tag, i});
    const size_t label = i % spec.num_classes;

    std::string text = make_sentence(spec, label, rng);

    // Exactly one spurious token per sentence, label-matched with
    // probability rho, inserted at a uniformly random position so position
    // alone cannot identify it.
    size_t spur_class = label;
    if (rng.next_double() >= rho) {
      const size_t other = rng.uniform_index(spec.num_classes - 1);
      spur_class = other >= label ? other + 1 : other;
    }
    const std::string spur_tok =
        "spur" + std::to_string(spur_class) +
        (spec.spurious_per_class > 1
             ? "_" + std::to_string(rng.uniform_index(spec.spurious_per_class))
             : std::string());

    auto tokens = whitespace_tokens(text);
    const size_t pos = rng.uniform_index(tokens.size() + 1);
    tokens.insert(tokens.begin() + static_cast<ptrdiff_t>(pos), spur_tok);
    std::string with_spur = tokens[0];
    for (size_t t = 1; t < tokens.size(); ++t) with_spur += " " + tokens[t];

    ds.texts.push_back(with_spur);
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace

SpuriousBenchmark generate_spurious_benchmark(const SpuriousSpec& spec) {
  spec.validate();
  SpuriousBenchmark b;
  b.train = make_split(spec, 1, spec.train_size, spec.rho_train);
  b.dev = make_split(spec, 2, spec.dev_size, spec.rho_train);
  b.ood = make_split(spec, 3, spec.ood_size, spec.rho_ood);
  return b;
}

}  // namespace hcut
