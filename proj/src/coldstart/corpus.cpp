#include "hitmdp/coldstart/corpus.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hitmdp/core/rng.h"

namespace hitmdp::coldstart {

std::string Vocab::to_string(int id) {
  if (id >= 0 && id < kNumbers) return std::to_string(id);
  switch (id) {
    case kPlus: return "+";
    case kEquals: return "=";
    case kSep: return ";";
    case kEos: return "<eos>";
  }
  throw std::out_of_range("token id out of range: " + std::to_string(id));
}

int Vocab::from_string(const std::string& t) {
  if (t == "+") return kPlus;
  if (t == "=") return kEquals;
  if (t == ";") return kSep;
  if (t == "<eos>") return kEos;
  if (!t.empty() && t.size() <= 2 && std::all_of(t.begin(), t.end(), ::isdigit)) {
    int v = std::stoi(t);
    if (v < kNumbers && std::to_string(v) == t) return v;
  }
  throw std::invalid_argument("unknown token '" + t + "'");
}

std::string Vocab::join(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += to_string(ids[i]);
  }
  return out;
}

std::vector<int> Vocab::split(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> ids;
  std::string tok;
  while (in >> tok) ids.push_back(from_string(tok));
  return ids;
}

void ReasoningSample::validate(int vocab_size) const {
  if (prompt.empty()) throw std::invalid_argument("sample: empty prompt");
  if (answer.empty()) throw std::invalid_argument("sample: empty answer");
  for (const auto* seq : {&prompt, &cot, &answer})
    for (int t : *seq)
      if (t < 0 || t >= vocab_size) throw std::invalid_argument("sample: token id out of range");
}

Task task_from_string(const std::string& s) {
  if (s == "copy") return Task::Copy;
  if (s == "add2") return Task::Add2;
  if (s == "add3") return Task::Add3;
  throw std::invalid_argument("unknown task '" + s + "' (copy, add2, add3)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Copy: return "copy";
    case Task::Add2: return "add2";
    case Task::Add3: return "add3";
  }
  return "copy";
}

namespace {

constexpr int P = Vocab::kPlus, E = Vocab::kEquals, S = Vocab::kSep;

std::vector<ReasoningSample> all_problems(Task task) {
  std::vector<ReasoningSample> pool;
  const int N = Vocab::kNumbers;
  switch (task) {
    case Task::Copy:
      for (int x = 0; x < 10; ++x)
        for (int y = 10; y < 20; ++y)
          for (int z = 20; z < 30; ++z) pool.push_back({{x, y, z, E}, {x, y, z}, {x, y, z}});
      break;
    case Task::Add2:
      for (int a = 0; a < N; ++a)
        for (int b = 0; a + b < N; ++b) pool.push_back({{a, P, b, E}, {a, P, b, E, a + b}, {a + b}});
      break;
    case Task::Add3:
      for (int a = 0; a < N; ++a)
        for (int b = 0; a + b < N; ++b)
          for (int c = 0; a + b + c < N; ++c) {
            int s = a + b, t = s + c;
            pool.push_back({{a, P, b, P, c, E}, {a, P, b, E, s, S, s, P, c, E, t}, {t}});
          }
      break;
  }
  return pool;
}

void shuffle(std::vector<ReasoningSample>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(i + 1)]);
}

}  // namespace

std::vector<ReasoningSample> make_synthetic_corpus(Task task, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_synthetic_corpus: n must be >= 1");
  Rng rng(seed);
  std::vector<ReasoningSample> pool = all_problems(task);
  shuffle(pool, rng);
  std::vector<ReasoningSample> out(pool.begin(), pool.begin() + std::min<std::size_t>(n, pool.size()));
  // Past the pool size, repeat problems in seeded order.
  while (static_cast<int>(out.size()) < n) out.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
  return out;
}

std::vector<ReasoningSample> held_out_samples(Task task, const std::vector<ReasoningSample>& taken,
                                              int n, std::uint64_t seed) {
  std::set<std::vector<int>> used;
  for (const auto& s : taken) used.insert(s.prompt);
  Rng rng(seed);
  std::vector<ReasoningSample> pool = all_problems(task);
  shuffle(pool, rng);
  std::vector<ReasoningSample> out;
  for (auto& s : pool) {
    if (static_cast<int>(out.size()) >= n) break;
    if (!used.count(s.prompt)) out.push_back(s);
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<ReasoningSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : samples)
    out << Vocab::join(s.prompt) << '\t' << Vocab::join(s.cot) << '\t' << Vocab::join(s.answer)
        << '\n';
}

std::vector<ReasoningSample> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ReasoningSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    try {
      ReasoningSample s{Vocab::split(fields[0]), Vocab::split(fields[1]), Vocab::split(fields[2])};
      s.validate(Vocab::kSize);
      out.push_back(std::move(s));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hitmdp::coldstart
