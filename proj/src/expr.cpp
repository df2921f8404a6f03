#include "sklaw/sym/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>

#include "sklaw/core/error.hpp"

namespace sklaw {

Expr Expr::constant(double v) {
    Expr e;
    e.nodes.push_back({Op::Const, v, -1});
    return e;
}

Expr Expr::variable(int index) {
    Expr e;
    e.nodes.push_back({Op::Var, 0.0, index});
    return e;
}

Expr Expr::unary(Op op, Expr child) {
    Expr e;
    e.nodes.reserve(1 + child.nodes.size());
    e.nodes.push_back({op, 0.0, -1});
    e.nodes.insert(e.nodes.end(), child.nodes.begin(), child.nodes.end());
    return e;
}

Expr Expr::binary(Op op, Expr lhs, Expr rhs) {
    Expr e;
    e.nodes.reserve(1 + lhs.nodes.size() + rhs.nodes.size());
    e.nodes.push_back({op, 0.0, -1});
    e.nodes.insert(e.nodes.end(), lhs.nodes.begin(), lhs.nodes.end());
    e.nodes.insert(e.nodes.end(), rhs.nodes.begin(), rhs.nodes.end());
    return e;
}

std::size_t subtree_end(const Expr& e, std::size_t root) {
    std::size_t i = root;
    int pending = 1;
    while (pending > 0) {
        pending += arity(e.nodes[i].op) - 1;
        ++i;
    }
    return i;
}

bool check_nesting(const Expr& e) {
    for (std::size_t i = 0; i < e.nodes.size(); ++i) {
        if (!is_special(e.nodes[i].op)) continue;
        const std::size_t end = subtree_end(e, i);
        for (std::size_t j = i + 1; j < end; ++j) {
            if (is_special(e.nodes[j].op)) return false;
        }
    }
    return true;
}

int compare_expr(const Expr& a, const Expr& b) {
    const std::size_t n = std::min(a.nodes.size(), b.nodes.size());
    for (std::size_t i = 0; i < n; ++i) {
        const ExprNode& x = a.nodes[i];
        const ExprNode& y = b.nodes[i];
        if (x.op != y.op) return x.op < y.op ? -1 : 1;
        if (x.op == Op::Var && x.var != y.var) return x.var < y.var ? -1 : 1;
        if (x.op == Op::Const && x.value != y.value) return x.value < y.value ? -1 : 1;
    }
    if (a.nodes.size() != b.nodes.size()) return a.nodes.size() < b.nodes.size() ? -1 : 1;
    return 0;
}

namespace {

double apply_unary(Op op, double v) {
    switch (op) {
        case Op::Neg: return -v;
        case Op::Exp: return std::exp(v);
        case Op::Log: return std::log(v);
        default: return std::sin(v);
    }
}

double apply_binary(Op op, double a, double b) {
    switch (op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        default: return std::pow(a, b);
    }
}

double eval_rec(const Expr& e, std::span<const double> x, std::size_t& cursor) {
    const ExprNode& node = e.nodes[cursor++];
    double v;
    switch (arity(node.op)) {
        case 0:
            v = node.op == Op::Const ? node.value : x[static_cast<std::size_t>(node.var)];
            break;
        case 1:
            v = apply_unary(node.op, eval_rec(e, x, cursor));
            break;
        default: {
            const double lhs = eval_rec(e, x, cursor);
            const double rhs = eval_rec(e, x, cursor);
            // pow(NaN, 0) and pow(1, NaN) are 1 under IEEE; an invalid
            // operand must stay invalid.
            if (std::isnan(lhs) || std::isnan(rhs)) {
                v = std::numeric_limits<double>::quiet_NaN();
            } else {
                v = apply_binary(node.op, lhs, rhs);
            }
        }
    }
    // Non-finite results poison the whole evaluation; NaN propagates through
    // every operator except pow(x, 0), so force it explicitly.
    return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::optional<double> eval(const Expr& e, std::span<const double> x) {
    std::size_t cursor = 0;
    const double v = eval_rec(e, x, cursor);
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

Eigen::ArrayXd& EvalScratch::at(int level, Eigen::Index n) {
    while (static_cast<int>(stack.size()) <= level) stack.emplace_back();
    Eigen::ArrayXd& buf = stack[static_cast<std::size_t>(level)];
    if (buf.size() != n) buf.resize(n);
    return buf;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void mask_nonfinite(Eigen::ArrayXd& a) { a = a.isFinite().select(a, kNaN); }

void eval_batch_rec(const Expr& e, const Eigen::MatrixXd& X, EvalScratch& scratch,
                    std::size_t& cursor, int level, Eigen::ArrayXd& out) {
    const ExprNode& node = e.nodes[cursor++];
    const Eigen::Index n = X.rows();
    switch (node.op) {
        case Op::Const:
            out.setConstant(n, node.value);
            return;
        case Op::Var:
            out = X.col(node.var).array();
            return;
        case Op::Neg:
            eval_batch_rec(e, X, scratch, cursor, level, out);
            out = -out;
            return;
        case Op::Exp:
            eval_batch_rec(e, X, scratch, cursor, level, out);
            out = out.exp();
            break;
        case Op::Log:
            eval_batch_rec(e, X, scratch, cursor, level, out);
            out = out.log();
            break;
        case Op::Sin:
            eval_batch_rec(e, X, scratch, cursor, level, out);
            out = out.sin();
            break;
        default: {
            eval_batch_rec(e, X, scratch, cursor, level, out);
            Eigen::ArrayXd& rhs = scratch.at(level, n);
            eval_batch_rec(e, X, scratch, cursor, level + 1, rhs);
            switch (node.op) {
                case Op::Add: out += rhs; break;
                case Op::Sub: out -= rhs; break;
                case Op::Mul: out *= rhs; break;
                default: {
                    // same pow quirk as the scalar path: NaN operands must win
                    const auto bad = out.isNaN() || rhs.isNaN();
                    out = bad.select(kNaN, out.pow(rhs));
                    break;
                }
            }
        }
    }
    mask_nonfinite(out);
}

}  // namespace

void eval_batch(const Expr& e, const Eigen::MatrixXd& X, EvalScratch& scratch, Eigen::ArrayXd& out) {
    std::size_t cursor = 0;
    out.resize(X.rows());
    eval_batch_rec(e, X, scratch, cursor, 0, out);
}

Eigen::ArrayXd eval_batch(const Expr& e, const Eigen::MatrixXd& X) {
    EvalScratch scratch;
    Eigen::ArrayXd out;
    eval_batch(e, X, scratch, out);
    return out;
}

Expr substitute(const Expr& e, int var, const Expr& replacement) {
    Expr out;
    out.nodes.reserve(e.nodes.size());
    for (const ExprNode& node : e.nodes) {
        if (node.op == Op::Var && node.var == var) {
            out.nodes.insert(out.nodes.end(), replacement.nodes.begin(), replacement.nodes.end());
        } else {
            out.nodes.push_back(node);
        }
    }
    return out;
}

std::vector<int> variables_of(const Expr& e) {
    std::vector<int> vars;
    for (const ExprNode& node : e.nodes) {
        if (node.op == Op::Var) vars.push_back(node.var);
    }
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
    return vars;
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

// Precedence levels: sum 1, product 2, unary minus 3, atom 4.
void render(const Expr& e, std::span<const std::string> names, std::size_t& cursor, int parent_prec,
            std::string& out) {
    const ExprNode& node = e.nodes[cursor++];
    switch (node.op) {
        case Op::Const: {
            if (node.value < 0 && parent_prec > 1) {
                out += '(';
                out += format_double(node.value);
                out += ')';
            } else {
                out += format_double(node.value);
            }
            return;
        }
        case Op::Var:
            out += names[static_cast<std::size_t>(node.var)];
            return;
        case Op::Neg: {
            const bool paren = parent_prec > 2;
            if (paren) out += '(';
            out += '-';
            render(e, names, cursor, 3, out);
            if (paren) out += ')';
            return;
        }
        case Op::Exp:
        case Op::Log:
        case Op::Sin: {
            out += node.op == Op::Exp ? "exp" : node.op == Op::Log ? "log" : "sin";
            out += '(';
            render(e, names, cursor, 0, out);
            out += ')';
            return;
        }
        case Op::Pow: {
            out += "pow(";
            render(e, names, cursor, 0, out);
            out += ", ";
            render(e, names, cursor, 0, out);
            out += ')';
            return;
        }
        case Op::Add:
        case Op::Sub: {
            const bool paren = parent_prec > 1;
            if (paren) out += '(';
            render(e, names, cursor, 1, out);
            out += node.op == Op::Add ? " + " : " - ";
            render(e, names, cursor, 2, out);
            if (paren) out += ')';
            return;
        }
        case Op::Mul: {
            const bool paren = parent_prec > 2;
            if (paren) out += '(';
            render(e, names, cursor, 2, out);
            out += '*';
            render(e, names, cursor, 3, out);
            if (paren) out += ')';
            return;
        }
    }
}

}  // namespace

std::string to_infix(const Expr& e, std::span<const std::string> var_names) {
    std::string out;
    std::size_t cursor = 0;
    render(e, var_names, cursor, 0, out);
    return out;
}

// ---------------------------------------------------------------------------
// Parsing (recursive descent over the rendering grammar above)

namespace {

struct Parser {
    const std::string& text;
    std::span<const std::string> names;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    bool eat(char c) {
        skip_ws();
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) {
        throw ValidationError("expression parse error at offset " + std::to_string(pos) + ": " + what);
    }

    Expr parse_expr() {
        Expr lhs = parse_term();
        for (;;) {
            skip_ws();
            if (eat('+')) {
                lhs = Expr::binary(Op::Add, std::move(lhs), parse_term());
            } else if (eat('-')) {
                lhs = Expr::binary(Op::Sub, std::move(lhs), parse_term());
            } else {
                return lhs;
            }
        }
    }

    Expr parse_term() {
        Expr lhs = parse_factor();
        while (eat('*')) lhs = Expr::binary(Op::Mul, std::move(lhs), parse_factor());
        return lhs;
    }

    Expr parse_factor() {
        skip_ws();
        if (eat('-')) {
            Expr inner = parse_factor();
            // "-0.5" is a negative literal, not Neg(0.5): keeps canonical trees round-trippable.
            if (inner.nodes.size() == 1 && inner.nodes[0].op == Op::Const)
                return Expr::constant(-inner.nodes[0].value);
            return Expr::unary(Op::Neg, std::move(inner));
        }
        return parse_primary();
    }

    static bool name_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '#';
    }

    Expr parse_primary() {
        skip_ws();
        if (pos >= text.size()) fail("unexpected end of input");
        const char c = text[pos];
        if (c == '(') {
            ++pos;
            Expr inner = parse_expr();
            if (!eat(')')) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            double v = 0.0;
            const char* begin = text.data() + pos;
            const char* end = text.data() + text.size();
            const auto res = std::from_chars(begin, end, v);
            if (res.ec != std::errc{}) fail("bad number");
            pos = static_cast<std::size_t>(res.ptr - text.data());
            return Expr::constant(v);
        }
        if (name_char(c)) {
            std::size_t start = pos;
            while (pos < text.size() && name_char(text[pos])) ++pos;
            const std::string name = text.substr(start, pos - start);
            if (name == "exp" || name == "log" || name == "sin") {
                if (!eat('(')) fail("expected '(' after " + name);
                Expr inner = parse_expr();
                if (!eat(')')) fail("expected ')'");
                const Op op = name == "exp" ? Op::Exp : name == "log" ? Op::Log : Op::Sin;
                return Expr::unary(op, std::move(inner));
            }
            if (name == "pow") {
                if (!eat('(')) fail("expected '(' after pow");
                Expr base = parse_expr();
                if (!eat(',')) fail("expected ',' in pow");
                Expr exponent = parse_expr();
                if (!eat(')')) fail("expected ')'");
                return Expr::binary(Op::Pow, std::move(base), std::move(exponent));
            }
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (names[i] == name) return Expr::variable(static_cast<int>(i));
            }
            fail("unknown variable '" + name + "'");
        }
        fail(std::string("unexpected character '") + c + "'");
    }
};

}  // namespace

Expr parse_infix(const std::string& text, std::span<const std::string> var_names) {
    Parser p{text, var_names};
    Expr e = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size()) p.fail("trailing input");
    return e;
}

// ---------------------------------------------------------------------------
// JSON AST

namespace {

const char* op_name(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Var: return "var";
        case Op::Neg: return "neg";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sin: return "sin";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        default: return "pow";
    }
}

nlohmann::json ast_rec(const Expr& e, std::span<const std::string> names, std::size_t& cursor) {
    const ExprNode& node = e.nodes[cursor++];
    nlohmann::json j;
    j["op"] = op_name(node.op);
    if (node.op == Op::Const) {
        j["value"] = node.value;
    } else if (node.op == Op::Var) {
        j["name"] = names[static_cast<std::size_t>(node.var)];
    } else {
        nlohmann::json children = nlohmann::json::array();
        for (int i = 0; i < arity(node.op); ++i) children.push_back(ast_rec(e, names, cursor));
        j["children"] = std::move(children);
    }
    return j;
}

}  // namespace

nlohmann::json to_json_ast(const Expr& e, std::span<const std::string> var_names) {
    std::size_t cursor = 0;
    return ast_rec(e, var_names, cursor);
}

Expr from_json_ast(const nlohmann::json& j, std::span<const std::string> var_names) {
    const std::string op = j.at("op").get<std::string>();
    if (op == "const") return Expr::constant(j.at("value").get<double>());
    if (op == "var") {
        const std::string name = j.at("name").get<std::string>();
        for (std::size_t i = 0; i < var_names.size(); ++i) {
            if (var_names[i] == name) return Expr::variable(static_cast<int>(i));
        }
        throw ValidationError("unknown variable in expression AST: " + name);
    }
    static const std::pair<const char*, Op> ops[] = {
        {"neg", Op::Neg}, {"exp", Op::Exp}, {"log", Op::Log}, {"sin", Op::Sin},
        {"add", Op::Add}, {"sub", Op::Sub}, {"mul", Op::Mul}, {"pow", Op::Pow}};
    for (const auto& [name, code] : ops) {
        if (op != name) continue;
        const auto& children = j.at("children");
        if (static_cast<int>(children.size()) != arity(code))
            throw ValidationError("bad arity for operator " + op);
        if (arity(code) == 1) return Expr::unary(code, from_json_ast(children[0], var_names));
        return Expr::binary(code, from_json_ast(children[0], var_names),
                            from_json_ast(children[1], var_names));
    }
    throw ValidationError("unknown operator in expression AST: " + op);
}

}  // namespace sklaw
