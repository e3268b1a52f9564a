#include "umlab/checkpoint.hpp"

#include "text_util.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace umlab {

using detail::parse_number;
using detail::split_ws;

namespace {

template <typename M>
void write_block(std::ostream& out, const M& m, Eigen::Index rows, Eigen::Index cols) {
    out << rows << ' ' << cols << '\n';
    const auto flat = m.template reshaped<Eigen::RowMajor>();
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            if (j) out << ' ';
            out << format_g9(flat(i * cols + j));
        }
        out << '\n';
    }
}

void write_vector_line(std::ostream& out, const Vector& v) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (j) out << ' ';
        out << format_g9(v[j]);
    }
    out << '\n';
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    // Next non-empty line; false at end of input.
    bool next(std::vector<std::string_view>& toks) {
        while (std::getline(in_, line_)) {
            ++lineno_;
            toks = split_ws(line_);
            if (!toks.empty()) return true;
        }
        return false;
    }
    std::vector<std::string_view> require() {
        std::vector<std::string_view> toks;
        if (!next(toks)) throw FormatError("unexpected end of checkpoint", lineno_ + 1);
        return toks;
    }
    std::size_t line() const { return lineno_; }

    template <typename T>
    T number(std::string_view tok) {
        T v{};
        if (!parse_number(tok, v)) throw FormatError("bad number '" + std::string(tok) + "'", lineno_);
        return v;
    }

    RowVector row(Eigen::Index cols) {
        const auto toks = require();
        if (static_cast<Eigen::Index>(toks.size()) != cols)
            throw FormatError("expected " + std::to_string(cols) + " values, found " + std::to_string(toks.size()), lineno_);
        RowVector r(cols);
        for (Eigen::Index j = 0; j < cols; ++j) r[j] = number<double>(toks[static_cast<std::size_t>(j)]);
        return r;
    }

    Matrix block(Eigen::Index rows, Eigen::Index cols) {
        const auto head = require();
        if (head.size() != 2 || number<long long>(head[0]) != rows || number<long long>(head[1]) != cols)
            throw FormatError("expected block header '" + std::to_string(rows) + " " + std::to_string(cols) + "'", lineno_);
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = row(cols);
        return m;
    }

private:
    std::istream& in_;
    std::string line_;
    std::size_t lineno_ = 0;
};

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    const Parameters& p = ckpt.model;
    out << "CKPTV1 " << p.num_layers() << '\n';
    for (int l = 0; l < p.num_layers(); ++l) {
        const Matrix& w = p.weights[static_cast<std::size_t>(l)];
        write_block(out, w, w.rows(), w.cols());
        write_vector_line(out, p.biases[static_cast<std::size_t>(l)]);
    }
    out << "ACT " << activation_name(p.activation) << '\n';
    for (const auto& [k, v] : ckpt.meta) out << "META " << k << ' ' << v << '\n';
    if (ckpt.head) {
        const TspHeadParams& h = *ckpt.head;
        out << "TSP " << h.heads() << ' ' << h.d << '\n';
        out << h.cfg.layers << ' ' << (h.cfg.layer_norm ? 1 : 0) << ' ' << (h.cfg.residual ? 1 : 0) << ' '
            << format_g9(h.cfg.dropout) << '\n';
        for (const auto& layer : h.layers) {
            for (const auto& w : layer.wq) write_block(out, w, w.rows(), w.cols());
            for (const auto& w : layer.wk) write_block(out, w, w.rows(), w.cols());
            for (const auto& w : layer.wv) write_block(out, w, w.rows(), w.cols());
            write_block(out, layer.wo, layer.wo.rows(), layer.wo.cols());
            write_block(out, layer.ln_gain, 1, layer.ln_gain.size());
            write_block(out, layer.ln_bias, 1, layer.ln_bias.size());
            write_block(out, layer.wl, layer.wl.rows(), layer.wl.cols());
            write_block(out, layer.bl, 1, layer.bl.size());
        }
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    LineReader r(in);
    Checkpoint ckpt;
    auto head = r.require();
    if (head.size() != 2 || head[0] != "CKPTV1") throw FormatError("malformed header, expected 'CKPTV1 <num_layers>'", r.line());
    const int layers = r.number<int>(head[1]);
    if (layers < 1) throw FormatError("num_layers must be >= 1", r.line());

    for (int l = 0; l < layers; ++l) {
        const auto dims = r.require();
        if (dims.size() != 2) throw FormatError("expected '<rows> <cols>'", r.line());
        const long long rows = r.number<long long>(dims[0]);
        const long long cols = r.number<long long>(dims[1]);
        if (rows < 1 || cols < 1) throw FormatError("layer dimensions must be positive", r.line());
        if (l > 0 && rows != ckpt.model.weights.back().cols())
            throw FormatError("layer " + std::to_string(l) + " input does not match previous output", r.line());
        Matrix w(rows, cols);
        for (long long i = 0; i < rows; ++i) w.row(i) = r.row(cols);
        ckpt.model.weights.push_back(std::move(w));
        ckpt.model.biases.push_back(r.row(cols).transpose());
    }

    std::vector<std::string_view> toks;
    while (r.next(toks)) {
        if (toks[0] == "ACT" && toks.size() == 2) {
            try {
                ckpt.model.activation = parse_activation(std::string(toks[1]));
            } catch (const ParameterError& e) {
                throw FormatError(e.what(), r.line());
            }
        } else if (toks[0] == "META" && toks.size() == 3) {
            ckpt.meta[std::string(toks[1])] = std::string(toks[2]);
        } else if (toks[0] == "TSP" && toks.size() == 3) {
            TspHeadParams h;
            h.cfg.heads = r.number<int>(toks[1]);
            h.d = r.number<int>(toks[2]);
            if (h.cfg.heads < 1 || h.d < 1) throw FormatError("TSP heads and d must be positive", r.line());
            const auto opts = r.require();
            if (opts.size() != 4) throw FormatError("expected '<layers> <layer_norm> <residual> <dropout>'", r.line());
            h.cfg.layers = r.number<int>(opts[0]);
            h.cfg.layer_norm = r.number<int>(opts[1]) != 0;
            h.cfg.residual = r.number<int>(opts[2]) != 0;
            h.cfg.dropout = r.number<double>(opts[3]);
            if (h.cfg.layers < 1) throw FormatError("TSP layers must be positive", r.line());
            const Eigen::Index d = h.d;
            const int H = h.cfg.heads;
            for (int l = 0; l < h.cfg.layers; ++l) {
                TspLayer layer;
                for (int i = 0; i < H; ++i) layer.wq.push_back(r.block(d, d));
                for (int i = 0; i < H; ++i) layer.wk.push_back(r.block(d, d));
                for (int i = 0; i < H; ++i) layer.wv.push_back(r.block(d, d));
                layer.wo = r.block(H * d, d);
                layer.ln_gain = r.block(1, d).transpose();
                layer.ln_bias = r.block(1, d).transpose();
                layer.wl = r.block(d, d);
                layer.bl = r.block(1, d).transpose();
                h.layers.push_back(std::move(layer));
            }
            try {
                h.validate();
            } catch (const ParameterError& e) {
                throw FormatError(e.what(), r.line());
            }
            ckpt.head = std::move(h);
        } else {
            throw FormatError("unexpected section '" + std::string(toks[0]) + "'", r.line());
        }
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    write_checkpoint(ckpt, out);
    if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace umlab
