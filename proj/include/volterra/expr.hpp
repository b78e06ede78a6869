#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra {

// Tiny arithmetic expression language for inline problem coefficients:
// +, -, *, /, ^, sin, cos, exp, min, max over the bound variables
// s, t, x, y, z, u, v, a.  Compiled once, evaluated against an 8-slot
// environment.
namespace expr {

enum Var { VS = 0, VT, VX, VY, VZ, VU, VV, VA, VAR_COUNT };

inline int var_index(const std::string& name) {
    static const char* names = "stxyzuva";
    for (int i = 0; i < VAR_COUNT; ++i)
        if (name.size() == 1 && name[0] == names[i]) return i;
    return -1;
}

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    enum Kind { Num, Variable, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Min, Max } kind;
    double value = 0.0;
    int var = 0;
    NodePtr a, b;
};

inline double eval(const Node& n, const double* env) {
    switch (n.kind) {
        case Node::Num: return n.value;
        case Node::Variable: return env[n.var];
        case Node::Neg: return -eval(*n.a, env);
        case Node::Add: return eval(*n.a, env) + eval(*n.b, env);
        case Node::Sub: return eval(*n.a, env) - eval(*n.b, env);
        case Node::Mul: return eval(*n.a, env) * eval(*n.b, env);
        case Node::Div: return eval(*n.a, env) / eval(*n.b, env);
        case Node::Pow: return std::pow(eval(*n.a, env), eval(*n.b, env));
        case Node::Sin: return std::sin(eval(*n.a, env));
        case Node::Cos: return std::cos(eval(*n.a, env));
        case Node::Exp: return std::exp(eval(*n.a, env));
        case Node::Min: return std::min(eval(*n.a, env), eval(*n.b, env));
        case Node::Max: return std::max(eval(*n.a, env), eval(*n.b, env));
    }
    return 0.0;
}

inline void collect_vars(const Node& n, std::set<int>& used) {
    if (n.kind == Node::Variable) used.insert(n.var);
    if (n.a) collect_vars(*n.a, used);
    if (n.b) collect_vars(*n.b, used);
}

// normalized reprint used for structural config comparison
inline std::string canonical(const Node& n) {
    char buf[32];
    switch (n.kind) {
        case Node::Num: {
            std::snprintf(buf, sizeof buf, "%.17g", n.value);
            return buf;
        }
        case Node::Variable: {
            static const char* names = "stxyzuva";
            return std::string(1, names[n.var]);
        }
        case Node::Neg: return "(-" + canonical(*n.a) + ")";
        case Node::Add: return "(" + canonical(*n.a) + "+" + canonical(*n.b) + ")";
        case Node::Sub: return "(" + canonical(*n.a) + "-" + canonical(*n.b) + ")";
        case Node::Mul: return "(" + canonical(*n.a) + "*" + canonical(*n.b) + ")";
        case Node::Div: return "(" + canonical(*n.a) + "/" + canonical(*n.b) + ")";
        case Node::Pow: return "(" + canonical(*n.a) + "^" + canonical(*n.b) + ")";
        case Node::Sin: return "sin(" + canonical(*n.a) + ")";
        case Node::Cos: return "cos(" + canonical(*n.a) + ")";
        case Node::Exp: return "exp(" + canonical(*n.a) + ")";
        case Node::Min: return "min(" + canonical(*n.a) + "," + canonical(*n.b) + ")";
        case Node::Max: return "max(" + canonical(*n.a) + "," + canonical(*n.b) + ")";
    }
    return "";
}

class Parser {
public:
    explicit Parser(const std::string& text) : text_(text) {}

    NodePtr parse() {
        NodePtr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    const std::string& text_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("parse error at position " + std::to_string(pos_) + ": " + what +
                          " in expression '" + text_ + "'");
    }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr make(Node::Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
        auto n = std::make_shared<Node>();
        n->kind = k;
        n->a = std::move(a);
        n->b = std::move(b);
        return n;
    }

    NodePtr parse_sum() {
        NodePtr left = parse_product();
        for (;;) {
            if (eat('+')) left = make(Node::Add, left, parse_product());
            else if (eat('-')) left = make(Node::Sub, left, parse_product());
            else return left;
        }
    }
    NodePtr parse_product() {
        NodePtr left = parse_unary();
        for (;;) {
            if (eat('*')) left = make(Node::Mul, left, parse_unary());
            else if (eat('/')) left = make(Node::Div, left, parse_unary());
            else return left;
        }
    }
    NodePtr parse_unary() {
        if (eat('-')) return make(Node::Neg, parse_unary());
        if (eat('+')) return parse_unary();
        return parse_power();
    }
    NodePtr parse_power() {
        NodePtr base = parse_atom();
        if (eat('^')) return make(Node::Pow, base, parse_unary());  // right-assoc
        return base;
    }
    NodePtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) fail("expected a value");
        const char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_name();
        if (eat('(')) {
            NodePtr e = parse_sum();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        fail(std::string("unexpected character '") + c + "'");
    }
    NodePtr parse_number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
                text_[pos_] == 'e' || text_[pos_] == 'E' ||
                ((text_[pos_] == '+' || text_[pos_] == '-') && pos_ > start &&
                 (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E'))))
            ++pos_;
        try {
            auto n = std::make_shared<Node>();
            n->kind = Node::Num;
            n->value = std::stod(text_.substr(start, pos_ - start));
            return n;
        } catch (...) {
            pos_ = start;
            fail("malformed number");
        }
    }
    NodePtr parse_name() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        const std::string name = text_.substr(start, pos_ - start);
        if (name == "sin" || name == "cos" || name == "exp") {
            if (!eat('(')) fail("expected '(' after " + name);
            NodePtr a = parse_sum();
            if (!eat(')')) fail("expected ')'");
            return make(name == "sin" ? Node::Sin : name == "cos" ? Node::Cos : Node::Exp, a);
        }
        if (name == "min" || name == "max") {
            if (!eat('(')) fail("expected '(' after " + name);
            NodePtr a = parse_sum();
            if (!eat(',')) fail("expected ',' in " + name);
            NodePtr b = parse_sum();
            if (!eat(')')) fail("expected ')'");
            return make(name == "min" ? Node::Min : Node::Max, a, b);
        }
        const int v = var_index(name);
        if (v < 0) {
            pos_ = start;
            fail("unknown identifier '" + name + "'");
        }
        auto n = std::make_shared<Node>();
        n->kind = Node::Variable;
        n->var = v;
        return n;
    }
};

// Compiled coefficient expression restricted to a declared variable set.
class Compiled {
public:
    Compiled() = default;
    Compiled(const std::string& text, const std::string& allowed_vars, const std::string& role)
        : text_(text) {
        node_ = Parser(text).parse();
        std::set<int> used;
        collect_vars(*node_, used);
        for (int v : used) {
            static const char* names = "stxyzuva";
            if (allowed_vars.find(names[v]) == std::string::npos)
                throw ConfigError(role + ": variable '" + std::string(1, names[v]) +
                                  "' is not available in this coefficient (allowed: " + allowed_vars + ")");
        }
    }

    bool valid() const { return static_cast<bool>(node_); }
    double operator()(const double* env) const { return eval(*node_, env); }
    bool uses(int var) const {
        if (!node_) return false;
        std::set<int> used;
        collect_vars(*node_, used);
        return used.count(var) > 0;
    }
    std::string canonical_text() const { return node_ ? canonical(*node_) : std::string(); }
    const std::string& source() const { return text_; }

private:
    std::string text_;
    NodePtr node_;
};

} // namespace expr
} // namespace volterra
