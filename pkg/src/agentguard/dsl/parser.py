"""Parser for the policy language.

The surface syntax is block-structured::

    version: 2
    default: allow
    on_error: review

    rule no_shell {
      phase: pre
      priority: 10
      when: tool.name == "shell" and not exists(args.dry_run)
      effect: deny
      reason: "interactive shells are banned"
    }

Strings use JSON syntax, ``#`` starts a line comment, whitespace and newlines
are insignificant. The normative grammar ships in ``docs/dsl-grammar.ebnf``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Optional

from ..model import AttributePath, Effect, ModelError, PATH_ROOTS
from .nodes import (
    And,
    Compare,
    COMPARE_OPS,
    ConditionExpr,
    Contains,
    Exists,
    HistoryCount,
    HistoryExists,
    HISTORY_NODES,
    In,
    Literal,
    Match,
    Not,
    Or,
    PolicySet,
    Rule,
    walk_condition,
    condition_paths,
)

_DURATION_UNITS = {"ms": 0.001, "s": 1.0, "m": 60.0, "h": 3600.0}

# Constructs outside the linear-friendly dialect: backreferences, lookaround,
# and conditional groups are rejected outright at parse time.
_BANNED_PATTERN_RE = re.compile(r"\\[1-9]|\(\?P=|\(\?=|\(\?!|\(\?<=|\(\?<!|\(\?\(")


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # error | warning | note
    code: str
    message: str
    line: int
    col: int

    def render(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message} [{self.code}]"

    def to_json(self) -> dict[str, Any]:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "line": self.line,
            "col": self.col,
        }


class PolicyParseError(ValueError):
    """Parse failed; carries every collected diagnostic."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        summary = "; ".join(d.render() for d in diagnostics[:5])
        if len(diagnostics) > 5:
            summary += f"; ... {len(diagnostics) - 5} more"
        super().__init__(f"policy parse failed: {summary}")


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # ident | number | string | duration | op | punct | eof
    text: str
    value: Any
    line: int
    col: int


class _LexError(Exception):
    def __init__(self, message: str, line: int, col: int):
        self.diagnostic = Diagnostic("error", "syntax", message, line, col)


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_PUNCT = {"{", "}", "(", ")", "[", "]", ",", ".", ":"}


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    break
                if text[j] == "\n":
                    raise _LexError("unterminated string", start_line, start_col)
                j += 1
            if j >= n:
                raise _LexError("unterminated string", start_line, start_col)
            raw = text[i : j + 1]
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                raise _LexError(f"bad string literal {raw!r}", start_line, start_col) from None
            tokens.append(_Token("string", raw, value, start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m and (ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit())):
            num_text = m.group(0)
            end = m.end()
            unit_m = _IDENT_RE.match(text, end)
            if unit_m:  # duration literal such as 300s or 250ms
                unit = unit_m.group(0)
                if unit not in _DURATION_UNITS:
                    raise _LexError(f"unknown duration unit {unit!r}", start_line, start_col)
                seconds = float(num_text) * _DURATION_UNITS[unit]
                full = num_text + unit
                tokens.append(_Token("duration", full, seconds, start_line, start_col))
                col += len(full)
                i = end + len(unit)
                continue
            value = float(num_text) if any(c in num_text for c in ".eE") else int(num_text)
            tokens.append(_Token("number", num_text, value, start_line, start_col))
            col += len(num_text)
            i = end
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group(0)
            tokens.append(_Token("ident", word, word, start_line, start_col))
            col += len(word)
            i = m.end()
            continue
        two = text[i : i + 2]
        if two in ("==", "!=", "<=", ">="):
            tokens.append(_Token("op", two, two, start_line, start_col))
            i += 2
            col += 2
            continue
        if ch in ("<", ">"):
            tokens.append(_Token("op", ch, ch, start_line, start_col))
            i += 1
            col += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token("punct", ch, ch, start_line, start_col))
            i += 1
            col += 1
            continue
        raise _LexError(f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(_Token("eof", "", None, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _ParseFailure(Exception):
    def __init__(self, diagnostic: Diagnostic):
        self.diagnostic = diagnostic


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    # token plumbing -------------------------------------------------------
    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def fail(self, message: str, tok: Optional[_Token] = None) -> "_ParseFailure":
        tok = tok or self.cur
        return _ParseFailure(Diagnostic("error", "syntax", message, tok.line, tok.col))

    def expect_text(self, text: str) -> _Token:
        if self.cur.text != text:
            raise self.fail(f"expected {text!r}, found {self.cur.text or 'end of input'!r}")
        return self.advance()

    def expect_kind(self, kind: str, what: str) -> _Token:
        if self.cur.kind != kind:
            raise self.fail(f"expected {what}, found {self.cur.text or 'end of input'!r}")
        return self.advance()

    # entry point ----------------------------------------------------------
    def parse(self) -> Optional[PolicySet]:
        version = 1
        default_decision = "allow"
        on_eval_error = "review"
        seen_settings: set[str] = set()
        rules: list[Rule] = []

        while self.cur.kind != "eof":
            try:
                if self.cur.text == "rule":
                    rule = self.parse_rule()
                    rules.append(rule)
                elif self.cur.text in ("version", "default", "on_error"):
                    name = self.advance().text
                    self.expect_text(":")
                    if name in seen_settings:
                        self.diagnostics.append(
                            Diagnostic("error", "duplicate_setting", f"setting {name!r} given twice",
                                       self.cur.line, self.cur.col)
                        )
                    seen_settings.add(name)
                    if name == "version":
                        tok = self.expect_kind("number", "an integer version")
                        if not isinstance(tok.value, int) or tok.value < 1:
                            raise self.fail("version must be a positive integer", tok)
                        version = tok.value
                    elif name == "default":
                        tok = self.advance()
                        if tok.text not in ("allow", "deny"):
                            raise self.fail("default must be 'allow' or 'deny'", tok)
                        default_decision = tok.text
                    else:
                        tok = self.advance()
                        if tok.text not in ("deny", "review", "ignore"):
                            raise self.fail("on_error must be 'deny', 'review' or 'ignore'", tok)
                        on_eval_error = tok.text
                else:
                    raise self.fail(f"expected 'rule' or a setting, found {self.cur.text!r}")
            except _ParseFailure as failure:
                self.diagnostics.append(failure.diagnostic)
                self.recover()

        self.check_rules(rules)
        if any(d.severity == "error" for d in self.diagnostics):
            return None
        return PolicySet(
            version=version,
            rules=tuple(rules),
            default_decision=default_decision,
            on_eval_error=on_eval_error,
        )

    def recover(self) -> None:
        """Skip ahead to the next plausible statement start."""
        while self.cur.kind != "eof":
            if self.cur.text == "rule":
                return
            if self.cur.text == "}":
                self.advance()
                return
            self.advance()

    # rules ------------------------------------------------------------------
    def parse_rule(self) -> Rule:
        self.expect_text("rule")
        name_tok = self.expect_kind("ident", "a rule name")
        span = (name_tok.line, name_tok.col)
        self.expect_text("{")

        phase = "pre"
        priority = 0
        enabled = True
        when: Optional[ConditionExpr] = None
        effect: Optional[Effect] = None
        reason = ""
        seen: set[str] = set()

        while self.cur.text != "}":
            if self.cur.kind == "eof":
                raise self.fail("unterminated rule block (missing '}')")
            field_tok = self.expect_kind("ident", "a rule field")
            field_name = field_tok.text
            self.expect_text(":")
            if field_name in seen:
                raise self.fail(f"field {field_name!r} given twice", field_tok)
            seen.add(field_name)
            if field_name == "phase":
                tok = self.advance()
                if tok.text not in ("pre", "post"):
                    raise self.fail("phase must be 'pre' or 'post'", tok)
                phase = tok.text
            elif field_name == "priority":
                tok = self.expect_kind("number", "an integer priority")
                if not isinstance(tok.value, int):
                    raise self.fail("priority must be an integer", tok)
                priority = tok.value
            elif field_name == "enabled":
                tok = self.advance()
                if tok.text not in ("true", "false"):
                    raise self.fail("enabled must be 'true' or 'false'", tok)
                enabled = tok.text == "true"
            elif field_name == "when":
                when = self.parse_expr()
            elif field_name == "effect":
                effect = self.parse_effect()
            elif field_name == "reason":
                reason = self.expect_kind("string", "a quoted reason").value
            else:
                raise self.fail(f"unknown rule field {field_name!r}", field_tok)
        self.expect_text("}")

        if when is None:
            raise _ParseFailure(Diagnostic(
                "error", "missing_field", f"rule {name_tok.value!r} has no 'when' condition",
                span[0], span[1]))
        if effect is None:
            raise _ParseFailure(Diagnostic(
                "error", "missing_field", f"rule {name_tok.value!r} has no 'effect'",
                span[0], span[1]))
        if reason:
            effect = Effect.from_json({**effect.to_json(), "reason": reason})
        try:
            return Rule(
                id=name_tok.value,
                when=when,
                effect=effect,
                phase=phase,
                priority=priority,
                enabled=enabled,
                span=span,
            )
        except ModelError as exc:
            raise _ParseFailure(Diagnostic("error", "invalid_rule", str(exc), span[0], span[1])) from exc

    def parse_effect(self) -> Effect:
        tok = self.advance()
        span = (tok.line, tok.col)
        try:
            if tok.text in ("allow", "deny"):
                return Effect(kind=tok.text)
            if tok.text == "review":
                kwargs: dict[str, Any] = {}
                if self.cur.text == "(":
                    for name, value_tok in self.parse_effect_args({"timeout", "on_timeout"}):
                        if name == "timeout":
                            if value_tok.kind not in ("duration", "number"):
                                raise self.fail("timeout must be a duration such as 300s", value_tok)
                            kwargs["review_timeout"] = float(value_tok.value)
                        else:
                            if value_tok.text not in ("allow", "deny"):
                                raise self.fail("on_timeout must be 'allow' or 'deny'", value_tok)
                            kwargs["on_timeout"] = value_tok.text
                return Effect(kind="review", **kwargs)
            if tok.text == "llm":
                kwargs = {}
                for name, value_tok in self.parse_effect_args({"prompt", "on_flag", "max_history"}):
                    if name == "prompt":
                        if value_tok.kind != "string":
                            raise self.fail("prompt must be a quoted string", value_tok)
                        kwargs["prompt_template"] = value_tok.value
                    elif name == "on_flag":
                        if value_tok.text not in ("deny", "review"):
                            raise self.fail("on_flag must be 'deny' or 'review'", value_tok)
                        kwargs["on_flag"] = value_tok.text
                    else:
                        if value_tok.kind != "number" or not isinstance(value_tok.value, int):
                            raise self.fail("max_history must be an integer", value_tok)
                        kwargs["max_history_events"] = value_tok.value
                if "prompt_template" not in kwargs:
                    raise _ParseFailure(Diagnostic(
                        "error", "missing_field", "llm effect requires a prompt", span[0], span[1]))
                return Effect(kind="llm", **kwargs)
        except ModelError as exc:
            raise _ParseFailure(Diagnostic("error", "invalid_effect", str(exc), span[0], span[1])) from exc
        raise self.fail(f"unknown effect {tok.text!r} (expected allow, deny, review or llm)", tok)

    def parse_effect_args(self, allowed: set[str]) -> list[tuple[str, _Token]]:
        self.expect_text("(")
        out: list[tuple[str, _Token]] = []
        seen: set[str] = set()
        while True:
            name_tok = self.expect_kind("ident", "an argument name")
            if name_tok.text not in allowed:
                raise self.fail(
                    f"unknown argument {name_tok.text!r} (expected one of {sorted(allowed)})", name_tok)
            if name_tok.text in seen:
                raise self.fail(f"argument {name_tok.text!r} given twice", name_tok)
            seen.add(name_tok.text)
            self.expect_text(":")
            out.append((name_tok.text, self.advance()))
            if self.cur.text == ",":
                self.advance()
                continue
            break
        self.expect_text(")")
        return out

    # expressions ------------------------------------------------------------
    def parse_expr(self) -> ConditionExpr:
        return self.parse_or()

    def parse_or(self) -> ConditionExpr:
        items = [self.parse_and()]
        while self.cur.text == "or":
            self.advance()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> ConditionExpr:
        items = [self.parse_not()]
        while self.cur.text == "and":
            self.advance()
            items.append(self.parse_not())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_not(self) -> ConditionExpr:
        if self.cur.text == "not":
            self.advance()
            return Not(self.parse_not())
        return self.parse_primary()

    def parse_primary(self) -> ConditionExpr:
        tok = self.cur
        if tok.text == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect_text(")")
            return inner
        if tok.text == "exists":
            self.advance()
            self.expect_text("(")
            path = self.parse_path()
            self.expect_text(")")
            return Exists(path)
        if tok.text == "history":
            return self.parse_history()
        return self.parse_comparison()

    def parse_history(self) -> ConditionExpr:
        self.expect_text("history")
        self.expect_text(".")
        kind_tok = self.expect_kind("ident", "'exists' or 'count'")
        if kind_tok.text == "exists":
            self.expect_text("(")
            inner = self.parse_expr()
            self.expect_text(")")
            return HistoryExists(inner)
        if kind_tok.text == "count":
            self.expect_text("(")
            inner = self.parse_expr()
            self.expect_text(")")
            op_tok = self.expect_kind("op", "a comparison operator")
            bound_tok = self.expect_kind("number", "an integer bound")
            if not isinstance(bound_tok.value, int):
                raise self.fail("history.count bound must be an integer", bound_tok)
            return HistoryCount(inner, op_tok.text, bound_tok.value)
        raise self.fail("history supports only history.exists(...) and history.count(...)", kind_tok)

    def parse_comparison(self) -> ConditionExpr:
        lhs = self.parse_operand()
        tok = self.cur
        if tok.kind == "op":
            self.advance()
            rhs = self.parse_operand()
            return Compare(lhs, tok.text, rhs)
        if tok.text in ("matches", "contains", "in"):
            if not isinstance(lhs, AttributePath):
                raise self.fail(f"left side of {tok.text!r} must be an attribute path", tok)
            self.advance()
            if tok.text == "matches":
                pat_tok = self.expect_kind("string", "a quoted pattern")
                return Match(lhs, pat_tok.value)
            if tok.text == "contains":
                return Contains(lhs, self.parse_literal())
            items: list[Literal] = []
            self.expect_text("[")
            if self.cur.text != "]":
                items.append(self.parse_literal())
                while self.cur.text == ",":
                    self.advance()
                    items.append(self.parse_literal())
            self.expect_text("]")
            return In(lhs, tuple(items))
        if isinstance(lhs, Literal) and isinstance(lhs.value, bool):
            return lhs  # bare boolean condition
        raise self.fail("expected a comparison operator, 'matches', 'contains' or 'in'", tok)

    def parse_operand(self) -> Any:
        tok = self.cur
        if tok.kind in ("string", "number"):
            self.advance()
            return Literal(tok.value)
        if tok.text in ("true", "false", "null"):
            self.advance()
            return Literal({"true": True, "false": False, "null": None}[tok.text])
        if tok.kind == "ident":
            if tok.text not in PATH_ROOTS:
                raise self.fail(
                    f"unknown attribute root {tok.text!r} (expected one of {', '.join(PATH_ROOTS)})", tok)
            return self.parse_path()
        raise self.fail(f"expected a value or attribute path, found {tok.text or 'end of input'!r}")

    def parse_path(self) -> AttributePath:
        root_tok = self.expect_kind("ident", "an attribute root")
        if root_tok.text not in PATH_ROOTS:
            raise self.fail(
                f"unknown attribute root {root_tok.text!r} (expected one of {', '.join(PATH_ROOTS)})",
                root_tok)
        segments: list[str] = []
        while self.cur.text == ".":
            self.advance()
            seg_tok = self.advance()
            if seg_tok.kind == "ident":
                segments.append(seg_tok.text)
            elif seg_tok.kind == "number":
                text = seg_tok.text
                if not re.fullmatch(r"\d+(\.\d+)*", text):
                    raise self.fail("path index segments must be plain integers", seg_tok)
                segments.extend(text.split("."))
            else:
                raise self.fail("expected a path segment after '.'", seg_tok)
        try:
            return AttributePath(root=root_tok.text, segments=tuple(segments))
        except ModelError as exc:
            raise _ParseFailure(
                Diagnostic("error", "invalid_path", str(exc), root_tok.line, root_tok.col)) from exc

    def parse_literal(self) -> Literal:
        tok = self.cur
        if tok.kind in ("string", "number"):
            self.advance()
            return Literal(tok.value)
        if tok.text in ("true", "false", "null"):
            self.advance()
            return Literal({"true": True, "false": False, "null": None}[tok.text])
        raise self.fail(f"expected a literal value, found {tok.text or 'end of input'!r}")

    # semantic checks ---------------------------------------------------------
    def check_rules(self, rules: list[Rule]) -> None:
        seen: dict[str, tuple[int, int]] = {}
        for rule in rules:
            span = rule.span or (0, 0)
            if rule.id in seen:
                first = seen[rule.id]
                self.diagnostics.append(Diagnostic(
                    "error", "duplicate_rule_id",
                    f"duplicate rule id {rule.id!r} (first defined at {first[0]}:{first[1]})",
                    span[0], span[1]))
            else:
                seen[rule.id] = span

            if rule.phase == "pre":
                for path in condition_paths(rule.when):
                    if path.root == "result":
                        self.diagnostics.append(Diagnostic(
                            "error", "illegal_result_path",
                            f"rule {rule.id!r} is pre-phase but references {path.dotted()!r}",
                            span[0], span[1]))
                        break

            history_seen = False
            for node in walk_condition(rule.when):
                if isinstance(node, HISTORY_NODES):
                    for inner in walk_condition(node.inner):
                        if isinstance(inner, HISTORY_NODES):
                            self.diagnostics.append(Diagnostic(
                                "error", "nested_history",
                                f"rule {rule.id!r} nests history conditions", span[0], span[1]))
                            history_seen = True
                            break
                if history_seen:
                    break

            for node in walk_condition(rule.when):
                if isinstance(node, Match):
                    problem = check_pattern(node.pattern)
                    if problem:
                        self.diagnostics.append(Diagnostic(
                            "error", "invalid_pattern",
                            f"rule {rule.id!r}: {problem}", span[0], span[1]))

            if rule.effect.kind == "llm":
                bad = unknown_placeholders(rule.effect.prompt_template or "")
                if bad:
                    self.diagnostics.append(Diagnostic(
                        "error", "unknown_placeholder",
                        f"rule {rule.id!r} prompt uses unknown placeholder(s): {', '.join(sorted(bad))}",
                        span[0], span[1]))


def check_pattern(pattern: str) -> Optional[str]:
    """Return an error message if the pattern is outside the dialect or does not compile."""
    if _BANNED_PATTERN_RE.search(pattern):
        return f"pattern {pattern!r} uses backreferences or lookaround, which are not supported"
    try:
        re.compile(pattern)
    except re.error as exc:
        return f"pattern {pattern!r} does not compile: {exc}"
    return None


def unknown_placeholders(template: str) -> set[str]:
    from ..inspector import PLACEHOLDERS  # local import; inspector also imports dsl-free model

    found = set(re.findall(r"\{\{\s*([^{}]*?)\s*\}\}", template))
    return {name for name in found if name not in PLACEHOLDERS}


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def try_parse_policy_set(text: str) -> tuple[Optional[PolicySet], list[Diagnostic]]:
    """Parse without raising; returns (policy or None, diagnostics)."""
    try:
        tokens = _lex(text)
    except _LexError as exc:
        return None, [exc.diagnostic]
    parser = _Parser(tokens)
    ps = parser.parse()
    return ps, parser.diagnostics


def parse_policy_set(text: str) -> PolicySet:
    """Parse policy text; raises PolicyParseError with line/column diagnostics on failure."""
    ps, diagnostics = try_parse_policy_set(text)
    if ps is None:
        errors = [d for d in diagnostics if d.severity == "error"]
        raise PolicyParseError(errors or diagnostics)
    return ps
