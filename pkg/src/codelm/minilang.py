"""Lexer, parser, and dataflow extractor for a small C-like language.

One grammar approximates Java/C snippets: function declarations, blocks,
assignment, if/else, while, return, expression statements, calls, and
arithmetic/comparison/boolean operators with standard precedence.  It
feeds the syntax (AST subtree) and semantics (def-use dataflow)
components of the composite code metric; out-of-subset constructs raise
``ParseError`` and the metric degrades gracefully.

All operations here are pure.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import PipelineError

KEYWORDS = (
    "if",
    "else",
    "while",
    "return",
    "int",
    "void",
    "bool",
    "float",
    "char",
    "string",
    "true",
    "false",
)

TYPE_KEYWORDS = ("int", "void", "bool", "float", "char", "string")

# Maximal munch: two-character operators must be tried first.
_TWO_CHAR_OPS = ("==", "!=", "<=", ">=", "&&", "||")
_ONE_CHAR_OPS = "=+-*/%<>!"
_PUNCT = "(){},;"

IDENT = "identifier"
KEYWORD = "keyword"
INTEGER = "integer"
STRING = "string"
OPERATOR = "operator"
PUNCT = "punctuation"


class LexError(PipelineError):
    code = "LEX_ERROR"

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at offset {position}")
        self.position = position


class ParseError(PipelineError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at offset {position}")
        self.position = position


@dataclass(frozen=True)
class LexToken:
    kind: str
    text: str
    position: int


def lex(code: str) -> list[LexToken]:
    """Tokenize with maximal munch; whitespace and comments are dropped.

    Unknown characters raise :class:`LexError` carrying the offset.
    """
    tokens: list[LexToken] = []
    i = 0
    n = len(code)
    while i < n:
        ch = code[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if code.startswith("//", i):
            j = code.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if code.startswith("/*", i):
            j = code.find("*/", i + 2)
            if j < 0:
                raise LexError("unterminated block comment", i)
            i = j + 2
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (code[j].isalnum() or code[j] == "_"):
                j += 1
            text = code[i:j]
            kind = KEYWORD if text in KEYWORDS else IDENT
            tokens.append(LexToken(kind, text, i))
            i = j
            continue
        if ch.isdigit():
            j = i + 1
            while j < n and code[j].isdigit():
                j += 1
            tokens.append(LexToken(INTEGER, code[i:j], i))
            i = j
            continue
        if ch == '"':
            j = i + 1
            while j < n and code[j] != '"':
                j += 2 if code[j] == "\\" else 1
            if j >= n:
                raise LexError("unterminated string literal", i)
            tokens.append(LexToken(STRING, code[i : j + 1], i))
            i = j + 1
            continue
        two = code[i : i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(LexToken(OPERATOR, two, i))
            i += 2
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(LexToken(OPERATOR, ch, i))
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append(LexToken(PUNCT, ch, i))
            i += 1
            continue
        raise LexError(f"unexpected character {ch!r}", i)
    return tokens


@dataclass(frozen=True)
class AstNode:
    """Tree node; ``text`` holds leaf content or an operator spelling."""

    kind: str
    text: str | None = None
    children: tuple["AstNode", ...] = field(default=())

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def _name(text: str) -> AstNode:
    return AstNode("Name", text)


def _literal(text: str) -> AstNode:
    return AstNode("Literal", text)


class _Parser:
    """Recursive descent over the token list."""

    def __init__(self, tokens: list[LexToken], source_len: int) -> None:
        self.tokens = tokens
        self.pos = 0
        self.source_len = source_len

    def _peek(self, ahead: int = 0) -> LexToken | None:
        idx = self.pos + ahead
        return self.tokens[idx] if idx < len(self.tokens) else None

    def _here(self) -> int:
        tok = self._peek()
        return tok.position if tok is not None else self.source_len

    def _fail(self, expected: str):
        tok = self._peek()
        got = repr(tok.text) if tok is not None else "end of input"
        raise ParseError(f"expected {expected}, got {got}", self._here())

    def _advance(self) -> LexToken:
        tok = self._peek()
        if tok is None:
            raise ParseError("unexpected end of input", self.source_len)
        self.pos += 1
        return tok

    def _expect(self, text: str) -> LexToken:
        tok = self._peek()
        if tok is None or tok.text != text:
            self._fail(repr(text))
        return self._advance()

    def _at(self, text: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.text == text

    def program(self) -> AstNode:
        items: list[AstNode] = []
        while self._peek() is not None:
            items.append(self.function() if self._at_function() else self.statement())
        return AstNode("Block", None, tuple(items))

    def _at_function(self) -> bool:
        a, b, c = self._peek(), self._peek(1), self._peek(2)
        return (
            a is not None
            and a.text in TYPE_KEYWORDS
            and b is not None
            and b.kind == IDENT
            and c is not None
            and c.text == "("
        )

    def function(self) -> AstNode:
        ret = AstNode("Type", self._advance().text)
        name_tok = self._advance()
        if name_tok.kind != IDENT:
            raise ParseError("expected function name", name_tok.position)
        self._expect("(")
        params: list[AstNode] = []
        if not self._at(")"):
            while True:
                ptype = self._peek()
                if ptype is None or ptype.text not in TYPE_KEYWORDS:
                    self._fail("parameter type")
                self._advance()
                pname = self._peek()
                if pname is None or pname.kind != IDENT:
                    self._fail("parameter name")
                self._advance()
                params.append(
                    AstNode("Param", None, (AstNode("Type", ptype.text), _name(pname.text)))
                )
                if self._at(","):
                    self._advance()
                    continue
                break
        self._expect(")")
        body = self.block()
        return AstNode("Function", None, (ret, _name(name_tok.text), *params, body))

    def block(self) -> AstNode:
        self._expect("{")
        stmts: list[AstNode] = []
        while not self._at("}"):
            if self._peek() is None:
                raise ParseError("unterminated block", self.source_len)
            stmts.append(self.statement())
        self._expect("}")
        return AstNode("Block", None, tuple(stmts))

    def statement(self) -> AstNode:
        tok = self._peek()
        if tok is None:
            raise ParseError("expected statement", self.source_len)
        if tok.text == "{":
            return self.block()
        if tok.text == "if":
            self._advance()
            self._expect("(")
            cond = self.expression()
            self._expect(")")
            then = self.statement()
            if self._at("else"):
                self._advance()
                return AstNode("If", None, (cond, then, self.statement()))
            return AstNode("If", None, (cond, then))
        if tok.text == "while":
            self._advance()
            self._expect("(")
            cond = self.expression()
            self._expect(")")
            return AstNode("While", None, (cond, self.statement()))
        if tok.text == "return":
            self._advance()
            if self._at(";"):
                self._advance()
                return AstNode("Return", None, ())
            value = self.expression()
            self._expect(";")
            return AstNode("Return", None, (value,))
        nxt = self._peek(1)
        if tok.kind == IDENT and nxt is not None and nxt.text == "=":
            self._advance()
            self._advance()
            value = self.expression()
            self._expect(";")
            return AstNode("Assign", None, (_name(tok.text), value))
        value = self.expression()
        self._expect(";")
        return AstNode("ExprStmt", None, (value,))

    def expression(self) -> AstNode:
        return self._binary(0)

    _LEVELS = (
        ("||",),
        ("&&",),
        ("==", "!="),
        ("<", ">", "<=", ">="),
        ("+", "-"),
        ("*", "/", "%"),
    )

    def _binary(self, level: int) -> AstNode:
        if level == len(self._LEVELS):
            return self._unary()
        node = self._binary(level + 1)
        ops = self._LEVELS[level]
        while True:
            tok = self._peek()
            if tok is None or tok.kind != OPERATOR or tok.text not in ops:
                return node
            self._advance()
            rhs = self._binary(level + 1)
            node = AstNode("BinOp", tok.text, (node, rhs))

    def _unary(self) -> AstNode:
        tok = self._peek()
        if tok is not None and tok.kind == OPERATOR and tok.text in ("!", "-"):
            self._advance()
            return AstNode("UnaryOp", tok.text, (self._unary(),))
        return self._primary()

    def _primary(self) -> AstNode:
        tok = self._peek()
        if tok is None:
            raise ParseError("expected expression", self.source_len)
        if tok.kind == INTEGER or tok.kind == STRING or tok.text in ("true", "false"):
            self._advance()
            return _literal(tok.text)
        if tok.kind == IDENT:
            self._advance()
            if self._at("("):
                self._advance()
                args: list[AstNode] = []
                if not self._at(")"):
                    while True:
                        args.append(self.expression())
                        if self._at(","):
                            self._advance()
                            continue
                        break
                self._expect(")")
                return AstNode("Call", None, (_name(tok.text), *args))
            return _name(tok.text)
        if tok.text == "(":
            self._advance()
            inner = self.expression()
            self._expect(")")
            return inner
        raise ParseError(f"expected expression, got {tok.text!r}", tok.position)


def parse(code_or_tokens) -> AstNode:
    """Parse source text (or a pre-lexed token list) into a Block root."""
    if isinstance(code_or_tokens, str):
        tokens = lex(code_or_tokens)
        source_len = len(code_or_tokens)
    else:
        tokens = list(code_or_tokens)
        source_len = tokens[-1].position + len(tokens[-1].text) if tokens else 0
    parser = _Parser(tokens, source_len)
    return parser.program()


def pretty_print(node: AstNode) -> str:
    """Emit source that re-parses to a structurally equal tree.

    Expressions are fully parenthesized so precedence never has to be
    reconstructed.
    """
    return " ".join(_emit(node, top=True))


def _emit(node: AstNode, top: bool = False) -> list[str]:
    kind = node.kind
    if kind == "Block":
        if top:
            out: list[str] = []
            for child in node.children:
                out += _emit(child)
            return out
        out = ["{"]
        for child in node.children:
            out += _emit(child)
        return out + ["}"]
    if kind == "Function":
        ret, name, *rest = node.children
        params, body = rest[:-1], rest[-1]
        out = [ret.text, name.text, "("]
        for i, param in enumerate(params):
            if i:
                out.append(",")
            out += [param.children[0].text, param.children[1].text]
        out.append(")")
        return out + _emit_braced(body)
    if kind == "Assign":
        return [node.children[0].text, "="] + _emit(node.children[1]) + [";"]
    if kind == "If":
        out = ["if", "("] + _emit(node.children[0]) + [")"] + _emit_braced(node.children[1])
        if len(node.children) == 3:
            out += ["else"] + _emit_braced(node.children[2])
        return out
    if kind == "While":
        return ["while", "("] + _emit(node.children[0]) + [")"] + _emit_braced(node.children[1])
    if kind == "Return":
        if node.children:
            return ["return"] + _emit(node.children[0]) + [";"]
        return ["return", ";"]
    if kind == "ExprStmt":
        return _emit(node.children[0]) + [";"]
    if kind == "BinOp":
        return ["("] + _emit(node.children[0]) + [node.text] + _emit(node.children[1]) + [")"]
    if kind == "UnaryOp":
        return ["(", node.text] + _emit(node.children[0]) + [")"]
    if kind == "Call":
        callee, *args = node.children
        out = [callee.text, "("]
        for i, arg in enumerate(args):
            if i:
                out.append(",")
            out += _emit(arg)
        return out + [")"]
    if kind in ("Name", "Literal", "Type"):
        return [node.text]
    raise PipelineError(f"cannot print node kind {kind!r}")


def _emit_braced(stmt: AstNode) -> list[str]:
    # Bare statements in if/while arms print as-is; re-parse is identical.
    return _emit(stmt)


def subtrees(ast: AstNode) -> Counter:
    """Multiset of canonical subtree serializations, one per node.

    Identifier leaves serialize as ``var`` and literals as ``lit``, so
    consistent renaming leaves the multiset unchanged.
    """
    out: Counter = Counter()
    for node in ast.walk():
        out[_serialize(node)] += 1
    return out


def _serialize(node: AstNode) -> str:
    if node.kind == "Name":
        return "(Name var)"
    if node.kind == "Literal":
        return "(Literal lit)"
    if node.kind == "Type":
        return f"(Type {node.text})"
    head = node.kind if node.text is None else f"{node.kind} {node.text}"
    if not node.children:
        return f"({head})"
    inner = " ".join(_serialize(child) for child in node.children)
    return f"({head} {inner})"


_STMT_KINDS = frozenset(["Function", "Assign", "If", "While", "Return", "ExprStmt"])


def _index_statements(ast: AstNode) -> dict[int, int]:
    index: dict[int, int] = {}
    for node in ast.walk():
        if node.kind in _STMT_KINDS:
            index[id(node)] = len(index)
    return index


def _expr_uses(node: AstNode) -> list[str]:
    return [n.text for n in node.walk() if n.kind == "Name"]


def dataflow(ast: AstNode) -> frozenset[tuple[int, int, str]]:
    """Def-use edges (def stmt index, use stmt index, "var").

    Straight-line code links each use to the most recent definition;
    branches contribute definitions from both arms (may-reach union);
    a while body and condition see only definitions from before the loop,
    so every edge points backward in statement order.  Undefined uses
    produce no edge.
    """
    index = _index_statements(ast)
    edges: set[tuple[int, int, str]] = set()

    Env = dict  # var name -> frozenset of defining statement indices

    def use_all(exprs, at: int, env: Env) -> None:
        for expr in exprs:
            for var in _expr_uses(expr):
                for d in env.get(var, ()):
                    edges.add((d, at, "var"))

    def merge(a: Env, b: Env) -> Env:
        out: Env = {}
        for var in set(a) | set(b):
            out[var] = a.get(var, frozenset()) | b.get(var, frozenset())
        return out

    def stmt(node: AstNode, env: Env) -> Env:
        i = index.get(id(node))
        kind = node.kind
        if kind == "Block":
            for child in node.children:
                env = stmt(child, env)
            return env
        if kind == "Function":
            inner: Env = {}  # a function body sees only its own parameters
            *head, body = node.children
            for param in head:
                if param.kind == "Param":
                    inner[param.children[1].text] = frozenset([i])
            stmt(body, inner)
            return env  # defs do not escape the function
        if kind == "Assign":
            target, value = node.children
            use_all([value], i, env)
            env = dict(env)
            env[target.text] = frozenset([i])
            return env
        if kind == "If":
            cond = node.children[0]
            use_all([cond], i, env)
            then_env = stmt(node.children[1], dict(env))
            else_env = stmt(node.children[2], dict(env)) if len(node.children) == 3 else env
            return merge(then_env, else_env)
        if kind == "While":
            cond, body = node.children
            use_all([cond], i, env)
            body_env = stmt(body, dict(env))
            return merge(env, body_env)
        if kind == "Return":
            use_all(node.children, i, env)
            return env
        if kind == "ExprStmt":
            use_all(node.children, i, env)
            return env
        raise PipelineError(f"unexpected statement kind {kind!r}")

    stmt(ast, {})
    return frozenset(edges)
