#include "senti/pvec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include "senti/util.hpp"

namespace senti {

namespace {

constexpr std::uint32_t kReserved = 3;  // <s>, </s>, <unk>
constexpr char kModelMagic[8] = {'S', 'E', 'N', 'T', 'I', 'P', 'V', '1'};
constexpr char kVectorMagic[8] = {'S', 'E', 'N', 'T', 'I', 'P', 'V', 'V'};

// -log sigmoid(x) for bit 0, -log sigmoid(-x) for bit 1.
double path_term(double x, std::uint8_t bit) { return bit ? softplus(x) : softplus(-x); }

// One hierarchical-softmax step for input h. Accumulates the input-side
// update into neu1e and, when `nodes` is non-null, applies the node update.
double hs_step(const HuffmanTree& tree, RowMatrix* nodes, const RowMatrix& frozen, const double* h, std::size_t dim,
               std::uint32_t leaf, double lr, double* neu1e) {
  const auto& code = tree.codes[leaf];
  const auto& points = tree.points[leaf];
  double loss = 0;
  for (std::size_t j = 0; j < code.size(); ++j) {
    const double* theta = (nodes ? nodes->row(points[j]).data() : frozen.row(points[j]).data());
    double x = 0;
    for (std::size_t k = 0; k < dim; ++k) x += theta[k] * h[k];
    loss += path_term(x, code[j]);
    double g = (1.0 - code[j] - sigmoid(x)) * lr;
    for (std::size_t k = 0; k < dim; ++k) neu1e[k] += g * theta[k];
    if (nodes) {
      double* t = nodes->row(points[j]).data();
      for (std::size_t k = 0; k < dim; ++k) t[k] += g * h[k];
    }
  }
  return loss;
}

std::vector<std::uint32_t> known_ids(const Vocabulary& vocab, std::span<const std::string> tokens) {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto id = vocab.find(t);
    if (id && *id >= kReserved) ids.push_back(*id);
  }
  return ids;
}

double decayed(double start, double end, std::size_t done, std::size_t total) {
  if (total == 0) return start;
  return start - (start - end) * static_cast<double>(done) / static_cast<double>(total);
}

// Context-window range [lo, hi) around t with word2vec's random shrink b.
std::pair<std::size_t, std::size_t> window_range(std::size_t t, std::size_t len, std::size_t window, std::size_t b) {
  std::size_t reach = window - b;
  std::size_t lo = t >= reach ? t - reach : 0;
  std::size_t hi = std::min(len, t + reach + 1);
  return {lo, hi};
}

// One pass over a document, always updating `doc`. Node and word parameters
// change only through the non-null `nodes` / `words` (both null for inference).
double document_pass(const ParagraphVectorModel& m, RowMatrix* nodes, RowMatrix* words, double* doc,
                     std::span<const std::uint32_t> ids, Rng& rng, std::size_t& processed, std::size_t total,
                     double lr_start, double lr_end, std::size_t& predicted) {
  const std::size_t dim = m.dim();
  const auto& cfg = m.config;
  std::vector<double> neu1e(dim), h(dim);
  double loss = 0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    double lr = decayed(lr_start, lr_end, processed++, total);
    std::uint32_t leaf = ids[t] - kReserved;
    std::size_t b = cfg.window ? rng.below(cfg.window) : 0;
    if (cfg.mode == PvMode::Dbow) {
      std::fill(neu1e.begin(), neu1e.end(), 0.0);
      loss += hs_step(m.tree, nodes, m.node_vectors, doc, dim, leaf, lr, neu1e.data());
      for (std::size_t k = 0; k < dim; ++k) doc[k] += neu1e[k];
      ++predicted;
      if (cfg.train_words && words && cfg.window) {
        auto [lo, hi] = window_range(t, ids.size(), cfg.window, b);
        for (std::size_t c = lo; c < hi; ++c) {
          if (c == t) continue;
          double* w = words->row(ids[c]).data();
          std::fill(neu1e.begin(), neu1e.end(), 0.0);
          loss += hs_step(m.tree, nodes, m.node_vectors, w, dim, leaf, lr, neu1e.data());
          for (std::size_t k = 0; k < dim; ++k) w[k] += neu1e[k];
          ++predicted;
        }
      }
    } else {
      auto [lo, hi] = cfg.window ? window_range(t, ids.size(), cfg.window, b) : std::pair{t, t + 1};
      std::copy(doc, doc + dim, h.begin());
      std::size_t count = 1;
      for (std::size_t c = lo; c < hi; ++c) {
        if (c == t) continue;
        const double* w = m.word_vectors.row(ids[c]).data();
        for (std::size_t k = 0; k < dim; ++k) h[k] += w[k];
        ++count;
      }
      for (auto& v : h) v /= static_cast<double>(count);
      std::fill(neu1e.begin(), neu1e.end(), 0.0);
      loss += hs_step(m.tree, nodes, m.node_vectors, h.data(), dim, leaf, lr, neu1e.data());
      ++predicted;
      // The mean spreads the input gradient evenly over its members.
      for (auto& v : neu1e) v /= static_cast<double>(count);
      for (std::size_t k = 0; k < dim; ++k) doc[k] += neu1e[k];
      if (words) {
        for (std::size_t c = lo; c < hi; ++c) {
          if (c == t) continue;
          double* w = words->row(ids[c]).data();
          for (std::size_t k = 0; k < dim; ++k) w[k] += neu1e[k];
        }
      }
    }
  }
  return loss;
}

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_matrix(std::ostream& out, const RowMatrix& m) {
  put(out, static_cast<std::uint64_t>(m.rows()));
  put(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

class Reader {
 public:
  Reader(std::istream& in, std::string where) : in_(in), where_(std::move(where)) {}

  template <class T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) fail("truncated file");
    return v;
  }
  std::string get_string() {
    auto n = get<std::uint32_t>();
    if (n > (1u << 20)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) fail("truncated file");
    return s;
  }
  RowMatrix get_matrix() {
    auto r = get<std::uint64_t>(), c = get<std::uint64_t>();
    if (r > (1ull << 32) || c > (1ull << 16)) fail("implausible matrix shape");
    RowMatrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    in_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in_) fail("truncated matrix");
    return m;
  }
  [[noreturn]] void fail(const std::string& why) { throw PvError(where_ + ": " + why); }

 private:
  std::istream& in_;
  std::string where_;
};

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PvError("cannot write " + path.string());
  return out;
}

}  // namespace

HuffmanTree build_huffman(std::span<const std::uint64_t> frequencies) {
  const std::size_t n = frequencies.size();
  if (n < 2) throw PvError("Huffman tree needs at least 2 words (got " + std::to_string(n) + ")");
  using Node = std::pair<std::uint64_t, std::size_t>;  // (frequency, id)
  std::priority_queue<Node, std::vector<Node>, std::greater<>> heap;
  for (std::size_t i = 0; i < n; ++i) heap.emplace(frequencies[i], i);
  std::vector<std::size_t> parent(2 * n - 1, 0);
  std::vector<std::uint8_t> bit(2 * n - 1, 0);
  std::size_t next = n;
  while (heap.size() > 1) {
    auto a = heap.top();
    heap.pop();
    auto b = heap.top();
    heap.pop();
    parent[a.second] = parent[b.second] = next;
    bit[a.second] = 0;
    bit[b.second] = 1;
    heap.emplace(a.first + b.first, next++);
  }
  const std::size_t root = next - 1;
  HuffmanTree tree;
  tree.codes.resize(n);
  tree.points.resize(n);
  for (std::size_t leaf = 0; leaf < n; ++leaf) {
    std::vector<std::uint8_t> code;
    std::vector<std::uint32_t> points;
    for (std::size_t node = leaf; node != root; node = parent[node]) {
      code.push_back(bit[node]);
      points.push_back(static_cast<std::uint32_t>(parent[node] - n));
    }
    std::reverse(code.begin(), code.end());
    std::reverse(points.begin(), points.end());
    tree.codes[leaf] = std::move(code);
    tree.points[leaf] = std::move(points);
  }
  return tree;
}

double hs_log_prob(const HuffmanTree& tree, const RowMatrix& nodes, const Eigen::VectorXd& h, std::uint32_t leaf) {
  double lp = 0;
  for (std::size_t j = 0; j < tree.codes.at(leaf).size(); ++j)
    lp -= path_term(nodes.row(tree.points[leaf][j]).dot(h.transpose()), tree.codes[leaf][j]);
  return lp;
}

double hs_loss_gradient(const HuffmanTree& tree, const RowMatrix& nodes, const Eigen::VectorXd& h,
                        std::uint32_t leaf, Eigen::VectorXd& grad_h, RowMatrix& grad_nodes) {
  grad_h = Eigen::VectorXd::Zero(h.size());
  if (grad_nodes.rows() != nodes.rows() || grad_nodes.cols() != nodes.cols())
    grad_nodes = RowMatrix::Zero(nodes.rows(), nodes.cols());
  double loss = 0;
  for (std::size_t j = 0; j < tree.codes.at(leaf).size(); ++j) {
    auto p = tree.points[leaf][j];
    double x = nodes.row(p).dot(h.transpose());
    loss += path_term(x, tree.codes[leaf][j]);
    double g = -(1.0 - tree.codes[leaf][j] - sigmoid(x));  // d loss / d x
    grad_h += g * nodes.row(p).transpose();
    grad_nodes.row(p) += g * h.transpose();
  }
  return loss;
}

std::string ParagraphVectorModel::shared_digest() const {
  Fnv1a f;
  f.update(word_vectors.data(), static_cast<std::size_t>(word_vectors.size()) * sizeof(double));
  f.update(node_vectors.data(), static_cast<std::size_t>(node_vectors.size()) * sizeof(double));
  return f.hex();
}

ParagraphVectorModel train_pv(std::span<const Document> docs, const PvConfig& config) {
  if (config.dim == 0) throw PvError("dimension must be positive");
  if (!(config.lr_start > 0) || config.lr_end < 0) throw PvError("learning rates must be positive");
  if (docs.empty()) throw PvError("no documents to embed");
  ParagraphVectorModel m;
  m.config = config;
  m.vocab = std::make_shared<Vocabulary>(build_vocab(docs, std::max<std::uint64_t>(1, config.min_count)));
  if (m.vocab->size() < kReserved + 2) throw PvError("vocabulary needs at least 2 words above min_count");
  std::vector<std::uint64_t> freq(m.vocab->frequencies().begin() + kReserved, m.vocab->frequencies().end());
  m.tree = build_huffman(freq);

  const auto D = static_cast<Eigen::Index>(config.dim);
  const double inv_d = 1.0 / static_cast<double>(config.dim);
  Rng rng(config.seed);
  auto init = [&](RowMatrix& mat, Eigen::Index rows) {
    mat.resize(rows, D);
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = (rng.uniform() - 0.5) * inv_d;
  };
  init(m.word_vectors, static_cast<Eigen::Index>(m.vocab->size()));
  init(m.doc_vectors, static_cast<Eigen::Index>(docs.size()));
  m.node_vectors = RowMatrix::Zero(static_cast<Eigen::Index>(m.tree.internal_nodes()), D);

  std::vector<std::vector<std::uint32_t>> ids(docs.size());
  std::size_t words = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    m.doc_ids.push_back(docs[d].id);
    ids[d] = known_ids(*m.vocab, docs[d].tokens);
    words += ids[d].size();
  }
  const std::size_t total = words * config.epochs;
  std::size_t processed = 0;
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(order);
    double loss = 0;
    std::size_t predicted = 0;
    for (auto d : order)
      loss += document_pass(m, &m.node_vectors, &m.word_vectors, m.doc_vectors.row(static_cast<Eigen::Index>(d)).data(), ids[d],
                            rng, processed, total, config.lr_start, config.lr_end, predicted);
    double mean = predicted ? loss / static_cast<double>(predicted) : 0.0;
    if (!std::isfinite(mean) || !m.doc_vectors.allFinite() || !m.node_vectors.allFinite())
      throw PvError("paragraph-vector training diverged in epoch " + std::to_string(epoch + 1) +
                    "; lower the learning rate");
    m.epoch_loss.push_back(mean);
  }
  return m;
}

Eigen::VectorXd initial_doc_vector(const ParagraphVectorModel& model, std::span<const std::string> tokens) {
  Fnv1a key;
  key.update(&model.config.seed, sizeof model.config.seed);
  for (const auto& t : tokens) key.update(t).update("\x1f", 1);
  Rng rng(key.value());
  Eigen::VectorXd v(static_cast<Eigen::Index>(model.dim()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = (rng.uniform() - 0.5) / static_cast<double>(model.dim());
  return v;
}

Eigen::VectorXd infer_doc_vector(const ParagraphVectorModel& model, std::span<const std::string> tokens,
                                 std::size_t steps, double lr) {
  Eigen::VectorXd v = initial_doc_vector(model, tokens);
  if (steps == 0) return v;
  auto ids = known_ids(*model.vocab, tokens);
  Fnv1a key;
  key.update(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
  Rng rng(key.value());
  std::size_t processed = 0, predicted = 0;
  const std::size_t total = ids.size() * steps;
  const double lr_end = std::min(lr, model.config.lr_end);
  for (std::size_t s = 0; s < steps; ++s)
    document_pass(model, nullptr, nullptr, v.data(), ids, rng, processed, total, lr, lr_end, predicted);
  return v;
}

RowMatrix infer_doc_vectors(const ParagraphVectorModel& model, std::span<const Document> docs, unsigned workers) {
  RowMatrix out(static_cast<Eigen::Index>(docs.size()), static_cast<Eigen::Index>(model.dim()));
  parallel_for(docs.size(), workers, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) =
        infer_doc_vector(model, docs[i].tokens, model.config.infer_steps, model.config.infer_lr).transpose();
  });
  return out;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0;
  return a.dot(b) / (na * nb);
}

void fit_pv_head(ParagraphVectorModel& model, std::span<const Label> labels, const LinearTrainConfig& config) {
  if (labels.size() != static_cast<std::size_t>(model.doc_vectors.rows()))
    throw PvError("label count does not match the document vectors");
  std::vector<SparseVector> x;
  std::vector<Label> y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::Unlabeled) continue;
    Eigen::VectorXd row = model.doc_vectors.row(static_cast<Eigen::Index>(i)).transpose();
    x.push_back(dense_features(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
    y.push_back(labels[i]);
  }
  model.head = train_linear(x, y, model.dim(), config);
}

std::vector<ScoreRecord> pv_classify(const ParagraphVectorModel& model, const RowMatrix& vectors,
                                     std::span<const std::string> ids, const std::string& model_id) {
  if (model.head.weights.size() != model.dim()) throw PvError("paragraph-vector classifier has not been fitted");
  if (ids.size() != static_cast<std::size_t>(vectors.rows())) throw PvError("id count does not match vectors");
  std::vector<ScoreRecord> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Eigen::VectorXd row = vectors.row(static_cast<Eigen::Index>(i)).transpose();
    out[i].id = ids[i];
    out[i].model = model_id;
    out[i].p_pos =
        clamp_probability(model.head.p_pos(dense_features(std::span<const double>(row.data(), model.dim()))));
  }
  return out;
}

void save_pv_model(const std::filesystem::path& path, const ParagraphVectorModel& m) {
  auto out = open_out(path);
  out.write(kModelMagic, sizeof kModelMagic);
  const auto& c = m.config;
  put(out, static_cast<std::uint64_t>(c.dim));
  put(out, static_cast<std::uint64_t>(c.window));
  put(out, static_cast<std::uint64_t>(c.epochs));
  put(out, c.lr_start);
  put(out, c.lr_end);
  put(out, c.seed);
  put(out, static_cast<std::uint8_t>(c.mode == PvMode::Dm));
  put(out, static_cast<std::uint8_t>(c.train_words));
  put(out, static_cast<std::uint8_t>(c.shuffle));
  put(out, c.min_count);
  put(out, static_cast<std::uint64_t>(c.infer_steps));
  put(out, c.infer_lr);
  put(out, static_cast<std::uint64_t>(m.vocab->size()));
  for (std::uint32_t i = 0; i < m.vocab->size(); ++i) {
    put_string(out, m.vocab->token(i));
    put(out, m.vocab->frequency(i));
  }
  put_matrix(out, m.word_vectors);
  put_matrix(out, m.node_vectors);
  put_matrix(out, m.doc_vectors);
  for (const auto& id : m.doc_ids) put_string(out, id);
  put(out, static_cast<std::uint64_t>(m.epoch_loss.size()));
  for (double l : m.epoch_loss) put(out, l);
  put(out, static_cast<std::uint64_t>(m.head.weights.size()));
  for (double w : m.head.weights) put(out, w);
  put(out, m.head.bias);
  put(out, m.head.l2);
  put(out, static_cast<std::uint8_t>(m.head.loss == LinearLoss::SquaredHinge));
  if (!out) throw PvError("error writing " + path.string());
}

ParagraphVectorModel load_pv_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PvError("cannot read " + path.string());
  Reader r(in, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0) r.fail("not a paragraph-vector model file");
  ParagraphVectorModel m;
  auto& c = m.config;
  c.dim = r.get<std::uint64_t>();
  c.window = r.get<std::uint64_t>();
  c.epochs = r.get<std::uint64_t>();
  c.lr_start = r.get<double>();
  c.lr_end = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  c.mode = r.get<std::uint8_t>() ? PvMode::Dm : PvMode::Dbow;
  c.train_words = r.get<std::uint8_t>() != 0;
  c.shuffle = r.get<std::uint8_t>() != 0;
  c.min_count = r.get<std::uint64_t>();
  c.infer_steps = r.get<std::uint64_t>();
  c.infer_lr = r.get<double>();
  auto n = r.get<std::uint64_t>();
  if (n < kReserved + 2 || n > (1ull << 26)) r.fail("implausible vocabulary size");
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto tok = r.get_string();
    auto f = r.get<std::uint64_t>();
    entries.emplace_back(std::move(tok), f);
  }
  m.vocab = std::make_shared<Vocabulary>(Vocabulary::from_entries(entries, c.min_count));
  if (m.vocab->size() != n) r.fail("vocabulary does not round-trip");
  std::vector<std::uint64_t> freq(m.vocab->frequencies().begin() + kReserved, m.vocab->frequencies().end());
  m.tree = build_huffman(freq);
  m.word_vectors = r.get_matrix();
  m.node_vectors = r.get_matrix();
  m.doc_vectors = r.get_matrix();
  const auto D = static_cast<Eigen::Index>(c.dim);
  if (m.word_vectors.rows() != static_cast<Eigen::Index>(n) || m.word_vectors.cols() != D ||
      m.node_vectors.rows() != static_cast<Eigen::Index>(m.tree.internal_nodes()) || m.node_vectors.cols() != D ||
      m.doc_vectors.cols() != D)
    r.fail("matrix shapes do not match the header");
  for (Eigen::Index i = 0; i < m.doc_vectors.rows(); ++i) m.doc_ids.push_back(r.get_string());
  auto n_loss = r.get<std::uint64_t>();
  if (n_loss > (1u << 20)) r.fail("implausible epoch count");
  for (std::uint64_t i = 0; i < n_loss; ++i) m.epoch_loss.push_back(r.get<double>());
  auto n_head = r.get<std::uint64_t>();
  if (n_head != 0 && n_head != c.dim) r.fail("classifier size does not match dimension");
  for (std::uint64_t i = 0; i < n_head; ++i) m.head.weights.push_back(r.get<double>());
  m.head.bias = r.get<double>();
  m.head.l2 = r.get<double>();
  m.head.loss = r.get<std::uint8_t>() ? LinearLoss::SquaredHinge : LinearLoss::Logistic;
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return m;
}

void write_vectors_text(const std::filesystem::path& path, std::span<const std::string> ids, const RowMatrix& v) {
  if (ids.size() != static_cast<std::size_t>(v.rows())) throw PvError("id count does not match vectors");
  auto out = open_out(path);
  char buf[32];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << '\t';
    for (Eigen::Index k = 0; k < v.cols(); ++k) {
      std::snprintf(buf, sizeof buf, "%.6g", v(static_cast<Eigen::Index>(i), k));
      out << (k ? " " : "") << buf;
    }
    out << '\n';
  }
}

void write_vectors_binary(const std::filesystem::path& path, std::span<const std::string> ids, const RowMatrix& v) {
  if (ids.size() != static_cast<std::size_t>(v.rows())) throw PvError("id count does not match vectors");
  auto out = open_out(path);
  out.write(kVectorMagic, sizeof kVectorMagic);
  put(out, static_cast<std::uint64_t>(v.rows()));
  put(out, static_cast<std::uint64_t>(v.cols()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    put_string(out, ids[i]);
    out.write(reinterpret_cast<const char*>(v.row(static_cast<Eigen::Index>(i)).data()),
              static_cast<std::streamsize>(v.cols() * sizeof(double)));
  }
}

std::pair<std::vector<std::string>, RowMatrix> read_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PvError("cannot read " + path.string());
  Reader r(in, path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  std::vector<std::string> ids;
  if (in && std::memcmp(magic, kVectorMagic, sizeof magic) == 0) {
    auto n = r.get<std::uint64_t>(), d = r.get<std::uint64_t>();
    if (n > (1ull << 32) || d > (1ull << 16)) r.fail("implausible header");
    RowMatrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::uint64_t i = 0; i < n; ++i) {
      ids.push_back(r.get_string());
      for (std::uint64_t k = 0; k < d; ++k) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r.get<double>();
    }
    return {ids, v};
  }
  in.clear();
  in.seekg(0);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) r.fail("line " + std::to_string(lineno) + ": expected id<TAB>values");
    ids.push_back(line.substr(0, tab));
    std::istringstream ss(line.substr(tab + 1));
    rows.emplace_back();
    for (double x; ss >> x;) rows.back().push_back(x);
    if (rows.back().size() != rows.front().size())
      r.fail("line " + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) + " values");
  }
  RowMatrix v(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return {ids, v};
}

}  // namespace senti
