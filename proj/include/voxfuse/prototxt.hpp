#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxfuse/error.hpp"
#include "voxfuse/network.hpp"

namespace voxfuse {

// Parser for the subset of the protobuf text format used by Caffe network
// descriptions: scalar fields, nested messages, '#' comments.
namespace prototxt {

struct Field {
  std::string key;
  bool is_message = false;
  std::string scalar;
  bool quoted = false;
  std::vector<Field> children;
  int line = 0;
  int column = 0;
};

class Lexer {
 public:
  enum class Tok { Ident, Number, String, Colon, LBrace, RBrace, End };

  struct Token {
    Tok kind = Tok::End;
    std::string text;
    int line = 1;
    int column = 1;
  };

  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  char cur() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
  void bump() {
    if (cur() == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void advance() {
    for (;;) {
      while (pos_ < src_.size() && (std::isspace(static_cast<unsigned char>(cur())) ||
                                    cur() == ',' || cur() == ';'))
        bump();
      if (cur() == '#') {
        while (pos_ < src_.size() && cur() != '\n') bump();
        continue;
      }
      break;
    }
    tok_ = Token{};
    tok_.line = line_;
    tok_.column = col_;
    if (pos_ >= src_.size()) return;
    const char c = cur();
    if (c == ':') {
      tok_.kind = Tok::Colon;
      bump();
    } else if (c == '{') {
      tok_.kind = Tok::LBrace;
      bump();
    } else if (c == '}') {
      tok_.kind = Tok::RBrace;
      bump();
    } else if (c == '"' || c == '\'') {
      tok_.kind = Tok::String;
      const char quote = c;
      bump();
      while (pos_ < src_.size() && cur() != quote) {
        if (cur() == '\n') break;
        if (cur() == '\\') {
          bump();
          switch (cur()) {
            case 'n': tok_.text += '\n'; break;
            case 't': tok_.text += '\t'; break;
            default: tok_.text += cur(); break;
          }
          bump();
          continue;
        }
        tok_.text += cur();
        bump();
      }
      if (cur() != quote) throw Error(ErrorKind::Syntax, "unterminated string", tok_.line, tok_.column);
      bump();
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
      tok_.kind = Tok::Number;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(cur())) || cur() == '.' || cur() == '-' ||
              cur() == '+'))
        tok_.text += (bump_ret());
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      tok_.kind = Tok::Ident;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(cur())) || cur() == '_' || cur() == '.'))
        tok_.text += bump_ret();
    } else {
      throw Error(ErrorKind::Syntax, std::string("unexpected character '") + c + "'", line_, col_);
    }
  }
  char bump_ret() {
    const char c = cur();
    bump();
    return c;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token tok_;
};

inline std::vector<Field> parse_fields(Lexer& lex, bool nested) {
  using Tok = Lexer::Tok;
  std::vector<Field> fields;
  for (;;) {
    const auto& t = lex.peek();
    if (t.kind == Tok::End) {
      if (nested) throw Error(ErrorKind::Syntax, "unexpected end of input, expected '}'", t.line, t.column);
      return fields;
    }
    if (t.kind == Tok::RBrace) {
      if (!nested) throw Error(ErrorKind::Syntax, "unmatched '}'", t.line, t.column);
      lex.next();
      return fields;
    }
    if (t.kind != Tok::Ident)
      throw Error(ErrorKind::Syntax, "expected field name, got '" + t.text + "'", t.line, t.column);
    Field f;
    const auto key = lex.next();
    f.key = key.text;
    f.line = key.line;
    f.column = key.column;
    bool colon = false;
    if (lex.peek().kind == Tok::Colon) {
      lex.next();
      colon = true;
    }
    const auto& v = lex.peek();
    if (v.kind == Tok::LBrace) {
      lex.next();
      f.is_message = true;
      f.children = parse_fields(lex, true);
    } else if (colon && (v.kind == Tok::Ident || v.kind == Tok::Number || v.kind == Tok::String)) {
      const auto val = lex.next();
      f.scalar = val.text;
      f.quoted = val.kind == Tok::String;
    } else {
      throw Error(ErrorKind::Syntax,
                  colon ? "expected value after ':'" : "expected ':' or '{' after field name",
                  v.line, v.column);
    }
    fields.push_back(std::move(f));
  }
}

inline std::vector<Field> parse_text(std::string_view text) {
  Lexer lex(text);
  return parse_fields(lex, false);
}

}  // namespace prototxt

namespace detail {

inline const prototxt::Field& require_scalar(const prototxt::Field& f) {
  if (f.is_message)
    throw Error(ErrorKind::Syntax, "field '" + f.key + "' expects a scalar value", f.line, f.column);
  return f;
}

inline const prototxt::Field& require_message(const prototxt::Field& f) {
  if (!f.is_message)
    throw Error(ErrorKind::Syntax, "field '" + f.key + "' expects a message", f.line, f.column);
  return f;
}

inline std::int64_t to_int(const prototxt::Field& f) {
  require_scalar(f);
  std::int64_t v = 0;
  const auto* b = f.scalar.data();
  const auto* e = b + f.scalar.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || f.quoted)
    throw Error(ErrorKind::Syntax, "field '" + f.key + "' expects an integer, got '" + f.scalar + "'",
                f.line, f.column);
  return v;
}

inline float to_float(const prototxt::Field& f) {
  require_scalar(f);
  float v = 0;
  std::string_view s = f.scalar;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (!s.empty() && (s.back() == 'f' || s.back() == 'F')) s.remove_suffix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || f.quoted)
    throw Error(ErrorKind::Syntax, "field '" + f.key + "' expects a number, got '" + f.scalar + "'",
                f.line, f.column);
  return v;
}

inline bool to_bool(const prototxt::Field& f) {
  require_scalar(f);
  if (f.scalar == "true" || f.scalar == "1") return true;
  if (f.scalar == "false" || f.scalar == "0") return false;
  throw Error(ErrorKind::Syntax, "field '" + f.key + "' expects true/false", f.line, f.column);
}

inline int to_dim(const prototxt::Field& f) {
  const auto v = to_int(f);
  if (v < 0 || v > (1 << 24))
    throw Error(ErrorKind::Syntax, "field '" + f.key + "' out of range", f.line, f.column);
  return static_cast<int>(v);
}

// Caffe's repeated kernel_size/stride/pad: one value applies to all three
// spatial dimensions, three values are (x, y, z).
inline Dim3 to_dim3(const std::vector<const prototxt::Field*>& values, const std::string& key,
                    Dim3 fallback) {
  if (values.empty()) return fallback;
  if (values.size() == 1) return Dim3::all(to_dim(*values[0]));
  if (values.size() == 3) return {to_dim(*values[0]), to_dim(*values[1]), to_dim(*values[2])};
  throw Error(ErrorKind::Syntax, "'" + key + "' needs 1 or 3 values", values[0]->line,
              values[0]->column);
}

class ParamReader {
 public:
  ParamReader(const prototxt::Field& msg, std::vector<std::string>* warnings)
      : msg_(require_message(msg)), warnings_(warnings) {}

  std::vector<const prototxt::Field*> all(std::string_view key) {
    std::vector<const prototxt::Field*> out;
    for (const auto& c : msg_.children)
      if (c.key == key) out.push_back(&c);
    known_.emplace_back(key);
    return out;
  }
  const prototxt::Field* one(std::string_view key) {
    auto v = all(key);
    if (v.size() > 1)
      throw Error(ErrorKind::Syntax, "field '" + std::string(key) + "' given more than once",
                  v[1]->line, v[1]->column);
    return v.empty() ? nullptr : v[0];
  }
  void ignore(std::initializer_list<std::string_view> keys) {
    for (auto k : keys) known_.emplace_back(k);
  }
  void finish() {
    for (const auto& c : msg_.children) {
      if (std::find(known_.begin(), known_.end(), c.key) != known_.end()) continue;
      if (warnings_)
        warnings_->push_back(std::to_string(c.line) + ":" + std::to_string(c.column) +
                             ": ignoring unknown field '" + c.key + "' in '" + msg_.key + "'");
    }
  }
  const prototxt::Field& message() const { return msg_; }

 private:
  const prototxt::Field& msg_;
  std::vector<std::string>* warnings_;
  std::vector<std::string> known_;
};

inline void read_convolution(ParamReader& r, LayerParams& p, const prototxt::Field& layer) {
  const auto* n = r.one("num_output");
  if (!n) throw Error(ErrorKind::MissingParam, "convolution_param.num_output is required", layer.line, layer.column);
  p.num_output = to_dim(*n);
  if (p.num_output <= 0)
    throw Error(ErrorKind::MissingParam, "num_output must be positive", n->line, n->column);
  auto k = r.all("kernel_size");
  if (k.empty())
    throw Error(ErrorKind::MissingParam, "convolution_param.kernel_size is required", layer.line, layer.column);
  p.kernel = to_dim3(k, "kernel_size", {});
  p.stride = to_dim3(r.all("stride"), "stride", {1, 1, 1});
  p.pad = to_dim3(r.all("pad"), "pad", {});
  if (const auto* b = r.one("bias_term")) p.bias_term = to_bool(*b);
  for (const auto* g : r.all("group"))
    if (to_int(*g) != 1) throw Error(ErrorKind::Unsupported, "grouped convolution", g->line, g->column);
  for (const auto* d : r.all("dilation"))
    if (to_int(*d) != 1) throw Error(ErrorKind::Unsupported, "dilated convolution", d->line, d->column);
  r.ignore({"weight_filler", "bias_filler", "engine", "axis"});
  if (p.kernel.x <= 0 || p.kernel.y <= 0 || p.kernel.z <= 0 || p.stride.x <= 0 ||
      p.stride.y <= 0 || p.stride.z <= 0)
    throw Error(ErrorKind::MissingParam, "kernel_size and stride must be positive", layer.line, layer.column);
}

inline void read_pooling(ParamReader& r, LayerParams& p, const prototxt::Field& layer) {
  if (const auto* m = r.one("pool")) {
    require_scalar(*m);
    if (m->scalar == "MAX") p.pool = PoolMode::Max;
    else if (m->scalar == "AVE") p.pool = PoolMode::Average;
    else throw Error(ErrorKind::Unsupported, "pooling mode '" + m->scalar + "'", m->line, m->column);
  }
  auto k = r.all("kernel_size");
  if (k.empty())
    throw Error(ErrorKind::MissingParam, "pooling_param.kernel_size is required", layer.line, layer.column);
  p.kernel = to_dim3(k, "kernel_size", {});
  p.stride = to_dim3(r.all("stride"), "stride", {1, 1, 1});
  for (const auto* pad : r.all("pad"))
    if (to_int(*pad) != 0) throw Error(ErrorKind::Unsupported, "padded pooling", pad->line, pad->column);
  r.ignore({"engine", "global_pooling"});
  if (p.kernel.x <= 0 || p.kernel.y <= 0 || p.kernel.z <= 0 || p.stride.x <= 0 ||
      p.stride.y <= 0 || p.stride.z <= 0)
    throw Error(ErrorKind::MissingParam, "kernel_size and stride must be positive", layer.line, layer.column);
}

}  // namespace detail

// Parses a network description. Unknown fields are skipped and reported
// through `warnings` when given; the returned spec is structurally validated.
inline NetworkSpec parse_prototxt(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  using detail::ParamReader;
  const auto fields = prototxt::parse_text(text);
  NetworkSpec spec;
  for (const auto& f : fields) {
    if (f.key == "name") {
      spec.name = detail::require_scalar(f).scalar;
    } else if (f.key == "layer") {
      ParamReader r(f, warnings);
      LayerSpec layer;
      layer.line = f.line;
      if (const auto* n = r.one("name")) layer.name = detail::require_scalar(*n).scalar;
      const auto* type = r.one("type");
      if (!type) throw Error(ErrorKind::MissingParam, "layer '" + layer.name + "' has no type", f.line, f.column);
      const auto kind = layer_kind_from_string(detail::require_scalar(*type).scalar);
      if (!kind)
        throw Error(ErrorKind::UnknownLayerKind, "unknown layer type '" + type->scalar + "'", type->line,
                    type->column);
      layer.kind = *kind;
      for (const auto* b : r.all("bottom")) layer.bottoms.push_back(detail::require_scalar(*b).scalar);
      for (const auto* t : r.all("top")) layer.tops.push_back(detail::require_scalar(*t).scalar);
      r.ignore({"param", "include", "exclude", "phase", "loss_weight", "propagate_down"});

      auto sub = [&](std::string_view key) -> const prototxt::Field* { return r.one(key); };
      auto& p = layer.params;
      switch (layer.kind) {
        case OpKind::Input: {
          const auto* ip = sub("input_param");
          if (!ip) throw Error(ErrorKind::MissingParam, "Input layer needs input_param", f.line, f.column);
          ParamReader ir(*ip, warnings);
          const auto shapes = ir.all("shape");
          if (shapes.size() != 1)
            throw Error(ErrorKind::MissingParam, "input_param needs exactly one shape", ip->line, ip->column);
          ParamReader sr(*shapes[0], warnings);
          const auto dims = sr.all("dim");
          if (dims.size() != 5)
            throw Error(ErrorKind::Unsupported, "input shape must have 5 dims (B,F,X,Y,Z)", shapes[0]->line,
                        shapes[0]->column);
          p.input_shape = {detail::to_int(*dims[0]), detail::to_int(*dims[1]), detail::to_int(*dims[2]),
                           detail::to_int(*dims[3]), detail::to_int(*dims[4])};
          for (auto d : p.input_shape.dims())
            if (d <= 0) throw Error(ErrorKind::Shape, "input dims must be positive", shapes[0]->line, shapes[0]->column);
          sr.finish();
          ir.finish();
          break;
        }
        case OpKind::Convolution:
        case OpKind::Deconvolution: {
          const auto* cp = sub("convolution_param");
          if (!cp) throw Error(ErrorKind::MissingParam, "layer '" + layer.name + "' needs convolution_param", f.line, f.column);
          ParamReader cr(*cp, warnings);
          detail::read_convolution(cr, p, f);
          cr.finish();
          break;
        }
        case OpKind::Pooling: {
          const auto* pp = sub("pooling_param");
          if (!pp) throw Error(ErrorKind::MissingParam, "layer '" + layer.name + "' needs pooling_param", f.line, f.column);
          ParamReader pr(*pp, warnings);
          detail::read_pooling(pr, p, f);
          pr.finish();
          break;
        }
        case OpKind::Eltwise: {
          if (const auto* ep = sub("eltwise_param")) {
            ParamReader er(*ep, warnings);
            if (const auto* op = er.one("operation")) {
              detail::require_scalar(*op);
              if (op->scalar == "SUM") p.eltwise = EltwiseOp::Sum;
              else if (op->scalar == "PROD") p.eltwise = EltwiseOp::Product;
              else if (op->scalar == "DIV") p.eltwise = EltwiseOp::Division;
              else throw Error(ErrorKind::Unsupported, "eltwise operation '" + op->scalar + "'", op->line, op->column);
            }
            if (const auto c = er.all("coeff"); !c.empty())
              throw Error(ErrorKind::Unsupported, "eltwise coefficients", c[0]->line, c[0]->column);
            er.finish();
          }
          break;
        }
        case OpKind::ELU: {
          if (const auto* ep = sub("elu_param")) {
            ParamReader er(*ep, warnings);
            if (const auto* a = er.one("alpha")) p.elu_alpha = detail::to_float(*a);
            er.finish();
          }
          break;
        }
        case OpKind::BatchNorm: {
          if (const auto* bp = sub("batch_norm_param")) {
            ParamReader br(*bp, warnings);
            if (const auto* e = br.one("eps")) p.bn_eps = detail::to_float(*e);
            br.ignore({"use_global_stats", "moving_average_fraction"});
            br.finish();
          }
          break;
        }
        case OpKind::Scale: {
          if (const auto* sp = sub("scale_param")) {
            ParamReader sr(*sp, warnings);
            if (const auto* b = sr.one("bias_term")) p.bias_term = detail::to_bool(*b);
            sr.ignore({"axis", "num_axes", "filler", "bias_filler"});
            sr.finish();
          }
          break;
        }
        case OpKind::MergeCrop: {
          if (const auto* mp = sub("mergecrop_param")) {
            ParamReader mr(*mp, warnings);
            mr.ignore({"operation", "forward", "backward"});
            mr.finish();
          }
          break;
        }
        default:
          break;
      }
      r.finish();
      spec.layers.push_back(std::move(layer));
    } else {
      if (warnings)
        warnings->push_back(std::to_string(f.line) + ":" + std::to_string(f.column) +
                            ": ignoring unknown top-level field '" + f.key + "'");
    }
  }
  validate_graph(spec);
  return spec;
}

namespace detail {

inline std::string format_float(float v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

inline void print_dim3(std::string& out, std::string_view key, Dim3 d) {
  if (d.isotropic()) {
    out += "    " + std::string(key) + ": " + std::to_string(d.x) + "\n";
  } else {
    for (int i = 0; i < 3; ++i) out += "    " + std::string(key) + ": " + std::to_string(d[i]) + "\n";
  }
}

}  // namespace detail

// Canonical text form; parse_prototxt(print_prototxt(s)) == s.
inline std::string print_prototxt(const NetworkSpec& spec) {
  std::string out;
  if (!spec.name.empty()) out += "name: " + detail::quote(spec.name) + "\n";
  for (const auto& l : spec.layers) {
    out += "layer {\n";
    out += "  name: " + detail::quote(l.name) + "\n";
    out += "  type: " + detail::quote(to_string(l.kind)) + "\n";
    for (const auto& b : l.bottoms) out += "  bottom: " + detail::quote(b) + "\n";
    for (const auto& t : l.tops) out += "  top: " + detail::quote(t) + "\n";
    const auto& p = l.params;
    switch (l.kind) {
      case OpKind::Input:
        out += "  input_param { shape {";
        for (auto d : p.input_shape.dims()) out += " dim: " + std::to_string(d);
        out += " } }\n";
        break;
      case OpKind::Convolution:
      case OpKind::Deconvolution:
        out += "  convolution_param {\n";
        out += "    num_output: " + std::to_string(p.num_output) + "\n";
        detail::print_dim3(out, "kernel_size", p.kernel);
        if (p.stride != Dim3{1, 1, 1}) detail::print_dim3(out, "stride", p.stride);
        if (!p.pad.is_zero()) detail::print_dim3(out, "pad", p.pad);
        if (!p.bias_term) out += "    bias_term: false\n";
        out += "  }\n";
        break;
      case OpKind::Pooling:
        out += "  pooling_param {\n";
        out += std::string("    pool: ") + (p.pool == PoolMode::Max ? "MAX" : "AVE") + "\n";
        detail::print_dim3(out, "kernel_size", p.kernel);
        if (p.stride != Dim3{1, 1, 1}) detail::print_dim3(out, "stride", p.stride);
        out += "  }\n";
        break;
      case OpKind::Eltwise: {
        const char* op = p.eltwise == EltwiseOp::Sum ? "SUM" : p.eltwise == EltwiseOp::Product ? "PROD" : "DIV";
        out += std::string("  eltwise_param { operation: ") + op + " }\n";
        break;
      }
      case OpKind::ELU:
        if (p.elu_alpha != 1.0f) out += "  elu_param { alpha: " + detail::format_float(p.elu_alpha) + " }\n";
        break;
      case OpKind::BatchNorm:
        if (p.bn_eps) out += "  batch_norm_param { eps: " + detail::format_float(*p.bn_eps) + " }\n";
        break;
      case OpKind::Scale:
        if (!p.bias_term) out += "  scale_param { bias_term: false }\n";
        break;
      default:
        break;
    }
    out += "}\n";
  }
  return out;
}

}  // namespace voxfuse
