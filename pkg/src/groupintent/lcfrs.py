"""Weighted LCFRS (fan-out <= 2) chart parsing.

A linear context-free rewriting system rule rewrites a nonterminal covering
up to two separate spans.  Yield templates describe how a rule assembles its
component spans out of terminals and the components of its children, which is
what lets discontinuous constituents (a b ... matched with a later c) carry
polynomial-time Viterbi parsing.

Grammars whose positive rules are all context-free convert generically; the
built-in context-sensitive family converts through a hand-built fan-out-2
table matched structurally against the rule set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

from .grammar import Grammar

# Template items: ("t", terminal) consumes one token, ("v", child, comp)
# splices in a child component.
TItem = tuple

Spans = tuple[tuple[int, int], ...]


class ParseError(Exception):
    """The string is not in the grammar's language."""


class UnsupportedGrammarError(Exception):
    """The grammar cannot be converted to a fan-out-2 LCFRS."""


@dataclass(frozen=True)
class LcfrsRule:
    lhs: str
    rhs: tuple[str, ...]
    templates: tuple[tuple[TItem, ...], ...]
    weight: float
    tags: tuple[str, ...]

    @property
    def fanout(self) -> int:
        return len(self.templates)


@dataclass(frozen=True)
class Lcfrs:
    start: str
    rules: tuple[LcfrsRule, ...]
    # rule-id -> LHS-group index of the source grammar, for node features
    family_of_tag: dict[str, int]
    n_families: int


@dataclass
class _Entry:
    logw: float
    tagseq: tuple[str, ...]
    rule: LcfrsRule
    children: tuple
    terminal_positions: tuple[tuple[int, str], ...]


def _terminal_anchor_options(template, tokens):
    """All intervals where a pure-terminal template matches the tokens."""
    names = [piece[1] for piece in template]
    k = len(names)
    out = []
    for start in range(len(tokens) - k + 1):
        if tokens[start : start + k] == names:
            out.append((start, start + k))
    return out


def _instantiate(rule, child_spans, tokens):
    """Compute LHS spans for fixed child spans; None if inconsistent.

    Each component template is anchored at its first variable, then walked
    outward; terminals must match the tokens and child components must abut
    exactly.  Templates without variables only occur in leaf rules.
    """
    n = len(tokens)
    comp_spans = []
    positions: list[tuple[int, str]] = []
    for template in rule.templates:
        var_idx = next((i for i, p in enumerate(template) if p[0] == "v"), None)
        if var_idx is None:
            raise AssertionError("non-leaf rule with variable-free component")
        _, ci, cj = template[var_idx]
        start, end = child_spans[ci][cj]
        local: list[tuple[int, str]] = []
        ok = True
        for piece in reversed(template[:var_idx]):
            if piece[0] == "t":
                start -= 1
                if start < 0 or tokens[start] != piece[1]:
                    ok = False
                    break
                local.append((start, piece[1]))
            else:
                s2, e2 = child_spans[piece[1]][piece[2]]
                if e2 != start:
                    ok = False
                    break
                start = s2
        if not ok:
            return None
        for piece in template[var_idx + 1 :]:
            if piece[0] == "t":
                if end >= n or tokens[end] != piece[1]:
                    ok = False
                    break
                local.append((end, piece[1]))
                end += 1
            else:
                s2, e2 = child_spans[piece[1]][piece[2]]
                if s2 != end:
                    ok = False
                    break
                end = e2
        if not ok:
            return None
        comp_spans.append((start, end))
        positions.extend(local)
    # Components must be ordered and disjoint.
    for (_, e1), (s2, _) in zip(comp_spans, comp_spans[1:]):
        if e1 > s2:
            return None
    return tuple(comp_spans), tuple(sorted(positions))


def parse_chart(lcfrs: Lcfrs, tokens: list[str]):
    """Viterbi chart over (nonterminal, spans) items.

    Ties in weight (within 1e-12 in log space) break toward the
    lexicographically smallest pre-order rule-id sequence, which makes golden
    trees deterministic.
    """
    rules = [r for r in lcfrs.rules if r.weight > 0.0]
    chart: dict[tuple[str, Spans], _Entry] = {}
    by_nt: dict[str, set[Spans]] = {}
    agenda: list[tuple[str, Spans]] = []

    def offer(nt, spans, entry):
        key = (nt, spans)
        old = chart.get(key)
        if old is not None:
            better = entry.logw > old.logw + 1e-12
            tied_better = (
                abs(entry.logw - old.logw) <= 1e-12 and entry.tagseq < old.tagseq
            )
            if not (better or tied_better):
                return
        chart[key] = entry
        by_nt.setdefault(nt, set()).add(spans)
        agenda.append(key)

    # Leaves: rules with no children enumerate terminal anchors per component.
    for rule in rules:
        if rule.rhs:
            continue
        options = [_terminal_anchor_options(tpl, tokens) for tpl in rule.templates]
        for combo in product(*options):
            if any(e1 > s2 for (_, e1), (s2, _) in zip(combo, combo[1:])):
                continue
            positions = []
            for (s, _), tpl in zip(combo, rule.templates):
                for off, piece in enumerate(tpl):
                    positions.append((s + off, piece[1]))
            offer(
                rule.lhs,
                tuple(combo),
                _Entry(
                    logw=math.log(rule.weight),
                    tagseq=rule.tags,
                    rule=rule,
                    children=(),
                    terminal_positions=tuple(sorted(positions)),
                ),
            )

    rules_by_child: dict[str, list[LcfrsRule]] = {}
    for rule in rules:
        for child_nt in set(rule.rhs):
            rules_by_child.setdefault(child_nt, []).append(rule)

    guard = 0
    max_updates = 10000 + 500 * (len(tokens) ** 2 + 1) * max(1, len(rules))
    while agenda:
        guard += 1
        if guard > max_updates:
            raise ParseError("chart update limit exceeded (cyclic unit rules?)")
        nt, spans = agenda.pop()
        key_entry = chart.get((nt, spans))
        if key_entry is None:
            continue
        for rule in rules_by_child.get(nt, []):
            slots = [i for i, r in enumerate(rule.rhs) if r == nt]
            for slot in slots:
                per_slot = []
                for j, child_nt in enumerate(rule.rhs):
                    if j == slot:
                        per_slot.append([spans])
                    else:
                        per_slot.append(sorted(by_nt.get(child_nt, ())))
                for combo in product(*per_slot):
                    inst = _instantiate(rule, combo, tokens)
                    if inst is None:
                        continue
                    lhs_spans, positions = inst
                    entries = [chart[(rule.rhs[j], combo[j])] for j in range(len(combo))]
                    logw = math.log(rule.weight) + sum(e.logw for e in entries)
                    tagseq = rule.tags + tuple(
                        tag for e in entries for tag in e.tagseq
                    )
                    offer(
                        rule.lhs,
                        lhs_spans,
                        _Entry(
                            logw=logw,
                            tagseq=tagseq,
                            rule=rule,
                            children=tuple(
                                (rule.rhs[j], combo[j]) for j in range(len(combo))
                            ),
                            terminal_positions=positions,
                        ),
                    )
    return chart


def best_parse(lcfrs: Lcfrs, tokens: list[str]):
    """Return (entry, chart) for the full-span start item, or raise."""
    if not tokens:
        raise ParseError("cannot parse an empty string")
    chart = parse_chart(lcfrs, tokens)
    goal = (lcfrs.start, ((0, len(tokens)),))
    if goal not in chart:
        raise ParseError(
            "string %r is not in the grammar's language" % " ".join(tokens)
        )
    return chart[goal], chart


def enumerate_derivations(lcfrs: Lcfrs, tokens: list[str]):
    """Exhaustively enumerate (log-weight, tag-sequence) over all derivations.

    Independent oracle for MAP optimality tests: a plain recursive splitter
    with no Viterbi logic, feasible for short strings only.
    """
    rules_by_lhs: dict[str, list[LcfrsRule]] = {}
    for rule in lcfrs.rules:
        if rule.weight > 0.0:
            rules_by_lhs.setdefault(rule.lhs, []).append(rule)

    memo: dict[tuple[str, Spans], list] = {}

    def fill(template, span, results):
        """All child-component bindings that let `template` cover `span`."""

        def step(idx, pos, bound):
            if idx == len(template):
                if pos == span[1]:
                    results.append(bound)
                return
            piece = template[idx]
            if piece[0] == "t":
                if pos < span[1] and tokens[pos] == piece[1]:
                    step(idx + 1, pos + 1, bound)
            else:
                remaining_min = len(template) - idx - 1
                for end in range(pos + 1, span[1] - remaining_min + 1):
                    step(idx + 1, end, bound + [((piece[1], piece[2]), (pos, end))])

        step(0, span[0], [])

    def derive(nt: str, spans: Spans):
        key = (nt, spans)
        if key in memo:
            return memo[key]
        memo[key] = []
        out = []
        for rule in rules_by_lhs.get(nt, []):
            if len(rule.templates) != len(spans):
                continue
            per_comp: list[list] = []
            feasible = True
            for template, span in zip(rule.templates, spans):
                results: list = []
                fill(template, span, results)
                if not results:
                    feasible = False
                    break
                per_comp.append(results)
            if not feasible:
                continue
            for combo in product(*per_comp):
                bindings: dict[tuple[int, int], tuple[int, int]] = {}
                ok = True
                for comp_bound in combo:
                    for slot, interval in comp_bound:
                        if slot in bindings and bindings[slot] != interval:
                            ok = False
                        bindings[slot] = interval
                if not ok:
                    continue
                child_spans: list[Spans] = []
                for ci in range(len(rule.rhs)):
                    comps = sorted(cj for (c, cj) in bindings if c == ci)
                    if comps != list(range(len(comps))) or not comps:
                        ok = False
                        break
                    child_spans.append(tuple(bindings[(ci, cj)] for cj in comps))
                if not ok:
                    continue
                child_results = [
                    derive(child_nt, child_spans[ci])
                    for ci, child_nt in enumerate(rule.rhs)
                ]
                if any(not res for res in child_results):
                    continue
                for picked in product(*child_results):
                    logw = math.log(rule.weight) + sum(pr[0] for pr in picked)
                    tagseq = rule.tags + tuple(tag for pr in picked for tag in pr[1])
                    out.append((logw, tagseq))
        memo[key] = out
        return out

    return derive(lcfrs.start, ((0, len(tokens)),))


# ---------------------------------------------------------------------------
# Grammar -> LCFRS conversion
# ---------------------------------------------------------------------------


def _family_map(g: Grammar) -> tuple[dict[str, int], int]:
    families: dict[str, int] = {}
    order: list[tuple] = []
    for rule in g.rules:
        if rule.lhs not in order:
            order.append(rule.lhs)
        families[rule.id] = order.index(rule.lhs)
    return families, len(order)


def _generic_cfg_lcfrs(g: Grammar) -> Lcfrs:
    rules = []
    for rule in g.positive_rules():
        if rule.is_noise:
            continue
        if len(rule.rhs) == 0:
            raise UnsupportedGrammarError(
                f"rule {rule.id}: empty right-hand sides are not supported"
            )
        template = []
        rhs_nts = []
        for sym in rule.rhs:
            if sym.kind == "terminal":
                template.append(("t", sym.name))
            else:
                template.append(("v", len(rhs_nts), 0))
                rhs_nts.append(sym.name)
        if len(rhs_nts) > 3:
            raise UnsupportedGrammarError(
                f"rule {rule.id}: more than 3 nonterminals on the RHS"
            )
        rules.append(
            LcfrsRule(
                lhs=rule.lhs[0].name,
                rhs=tuple(rhs_nts),
                templates=(tuple(template),),
                weight=g.probs[rule.id],
                tags=(rule.id,),
            )
        )
    families, n_fam = _family_map(g)
    return Lcfrs(start=g.start, rules=tuple(rules), family_of_tag=families,
                 n_families=n_fam)


@dataclass(frozen=True)
class TriangleShape:
    """Structural roles of the built-in family's rules (ids, or None)."""

    d: str
    b: str
    c: str
    chain_plain: str | None    # S -> d S
    chain_stop: str | None     # S -> M
    chain_stop_unit: str | None  # M -> d
    single: str | None         # S -> d S B
    single_stop: str | None    # S -> d B
    pair: str | None           # S -> d S B C
    pair_stop: str | None      # S -> d B C
    unit_b: str | None         # B -> b
    conv_db: str               # d B -> d b
    conv_bb: str               # b B -> b b
    conv_bc: str               # b C -> b c
    conv_cc: str               # c C -> c c
    swap: str                  # C B -> B C


def match_triangle(g: Grammar) -> TriangleShape | None:
    """Structurally identify the shipped context-sensitive family.

    Anchors on the five context-sensitive rewrite shapes (the CB -> BC swap
    plus the four boundary conversions); returns None when they are absent,
    incomplete, or any extra context-sensitive rule exists.
    """
    positive = [r for r in g.positive_rules() if not r.is_noise]
    cs = [r for r in positive if len(r.lhs) > 1]
    if len(cs) != 5:
        return None
    swap = None
    boundary = []   # x Y -> x z with z != x
    propagation = []  # x Y -> x x
    for r in cs:
        kinds_l = tuple(s.kind for s in r.lhs)
        kinds_r = tuple(s.kind for s in r.rhs)
        if kinds_l == ("nonterminal", "nonterminal") and r.rhs == (r.lhs[1], r.lhs[0]):
            if swap is not None:
                return None
            swap = r
        elif (kinds_l == ("terminal", "nonterminal")
              and kinds_r == ("terminal", "terminal") and r.rhs[0] == r.lhs[0]):
            if r.rhs[1].name == r.lhs[0].name:
                propagation.append(r)
            else:
                boundary.append(r)
        else:
            return None
    if swap is None or len(boundary) != 2 or len(propagation) != 2:
        return None
    c_nt, b_nt = swap.lhs[0], swap.lhs[1]

    def pick(rules, nonterminal):
        hits = [r for r in rules if r.lhs[1] == nonterminal]
        return hits[0] if len(hits) == 1 else None

    conv_db = pick(boundary, b_nt)
    conv_bc = pick(boundary, c_nt)
    conv_bb = pick(propagation, b_nt)
    conv_cc = pick(propagation, c_nt)
    if None in (conv_db, conv_bc, conv_bb, conv_cc):
        return None
    d_t, b_t = conv_db.lhs[0].name, conv_db.rhs[1].name
    c_t = conv_bc.rhs[1].name
    if conv_bc.lhs[0].name != b_t:
        return None
    if conv_bb.lhs[0].name != b_t or conv_cc.lhs[0].name != c_t:
        return None
    if len({d_t, b_t, c_t}) != 3:
        return None

    start = g.start
    roles: dict[str, str | None] = {
        "chain_plain": None, "chain_stop": None, "single": None,
        "single_stop": None, "pair": None, "pair_stop": None,
    }
    stop_nt: str | None = None
    unit_terminal: dict[str, tuple[str, str]] = {}
    for r in positive:
        if len(r.lhs) != 1:
            continue
        lhs = r.lhs[0].name
        names = tuple(s.name for s in r.rhs)
        kinds = tuple(s.kind for s in r.rhs)
        if lhs == start:
            if kinds == ("terminal", "nonterminal") and names == (d_t, start):
                roles["chain_plain"] = r.id
            elif kinds == ("nonterminal",) and names[0] != start:
                roles["chain_stop"] = r.id
                stop_nt = names[0]
            elif (kinds == ("terminal", "nonterminal", "nonterminal")
                  and names == (d_t, start, b_nt.name)):
                roles["single"] = r.id
            elif kinds == ("terminal", "nonterminal") and names == (d_t, b_nt.name):
                roles["single_stop"] = r.id
            elif (kinds
                  == ("terminal", "nonterminal", "nonterminal", "nonterminal")
                  and names == (d_t, start, b_nt.name, c_nt.name)):
                roles["pair"] = r.id
            elif (kinds == ("terminal", "nonterminal", "nonterminal")
                  and names == (d_t, b_nt.name, c_nt.name)):
                roles["pair_stop"] = r.id
            else:
                return None
        elif kinds == ("terminal",):
            unit_terminal[lhs] = (r.id, names[0])
        else:
            return None
    chain_stop_unit = None
    if stop_nt is not None:
        hit = unit_terminal.get(stop_nt)
        if hit is None or hit[1] != d_t:
            return None
        chain_stop_unit = hit[0]
    unit_b = None
    if b_nt.name in unit_terminal and unit_terminal[b_nt.name][1] == b_t:
        unit_b = unit_terminal[b_nt.name][0]
    return TriangleShape(
        d=d_t, b=b_t, c=c_t,
        chain_plain=roles["chain_plain"],
        chain_stop=roles["chain_stop"],
        chain_stop_unit=chain_stop_unit,
        single=roles["single"],
        single_stop=roles["single_stop"],
        pair=roles["pair"],
        pair_stop=roles["pair_stop"],
        unit_b=unit_b,
        conv_db=conv_db.id, conv_bb=conv_bb.id,
        conv_bc=conv_bc.id, conv_cc=conv_cc.id,
        swap=swap.id,
    )


def _triangle_lcfrs(g: Grammar, shape: TriangleShape) -> Lcfrs:
    """Fan-out-2 conversion table for the built-in family.

    TOP covers whole strings; ZONE covers (d-block, letter-zone) fragments as
    two components.  Swap and boundary-conversion rules sit alone in their LHS
    groups, so their normalized probability is 1 and omitting them from rule
    weights preserves derivation scores.
    """
    p = g.probs
    d, b, c = shape.d, shape.b, shape.c
    T = lambda x: ("t", x)
    V = lambda i, j: ("v", i, j)
    rules: list[LcfrsRule] = []

    def add(lhs, rhs, templates, weight, tags):
        if weight > 0.0:
            rules.append(
                LcfrsRule(lhs=lhs, rhs=tuple(rhs),
                          templates=tuple(tuple(tpl) for tpl in templates),
                          weight=weight, tags=tuple(tags))
            )

    if shape.chain_plain:
        add("TOP", ["TOP"], [[T(d), V(0, 0)]],
            p[shape.chain_plain], [shape.chain_plain])
    if shape.chain_stop and shape.chain_stop_unit:
        w = p[shape.chain_stop] * p[shape.chain_stop_unit]
        tags = [shape.chain_stop, shape.chain_stop_unit]
        add("TOP", [], [[T(d)]], w, tags)
        add("TOP", ["ZONE"], [[V(0, 0), T(d), V(0, 1)]], w, tags)
    if shape.single_stop:
        w = p[shape.single_stop]
        add("TOP", [], [[T(d), T(b)]], w, [shape.single_stop])
        add("TOP", ["ZONE"], [[V(0, 0), T(d), T(b), V(0, 1)]], w, [shape.single_stop])
    if shape.pair_stop:
        w = p[shape.pair_stop]
        add("TOP", [], [[T(d), T(b), T(c)]], w, [shape.pair_stop])
        add("TOP", ["ZONE"], [[V(0, 0), T(d), T(b), V(0, 1), T(c)]],
            w, [shape.pair_stop])
        add("TOP", ["ZONE"], [[V(0, 0), T(d), T(b), T(c), V(0, 1)]],
            w, [shape.pair_stop])
        add("TOP", ["ZONE", "ZONE"],
            [[V(1, 0), V(0, 0), T(d), T(b), V(0, 1), T(c), V(1, 1)]],
            w, [shape.pair_stop])
    if shape.single:
        w = p[shape.single]
        add("ZONE", [], [[T(d)], [T(b)]], w, [shape.single])
        add("ZONE", ["ZONE"], [[V(0, 0), T(d)], [T(b), V(0, 1)]], w, [shape.single])
    if shape.pair:
        w = p[shape.pair]
        add("ZONE", [], [[T(d)], [T(b), T(c)]], w, [shape.pair])
        add("ZONE", ["ZONE"], [[V(0, 0), T(d)], [T(b), V(0, 1), T(c)]],
            w, [shape.pair])
        add("ZONE", ["ZONE"], [[V(0, 0), T(d)], [T(b), T(c), V(0, 1)]],
            w, [shape.pair])
        add("ZONE", ["ZONE", "ZONE"],
            [[V(1, 0), V(0, 0), T(d)], [T(b), V(0, 1), T(c), V(1, 1)]],
            w, [shape.pair])
    families, n_fam = _family_map(g)
    return Lcfrs(start="TOP", rules=tuple(rules), family_of_tag=families,
                 n_families=n_fam)


def grammar_to_lcfrs(g: Grammar) -> Lcfrs:
    """Convert a grammar's positive rules to a parseable LCFRS.

    Noise rules are generation-only and are skipped: the parser covers the
    uncorrupted language.  Context-sensitive rule sets must match the shipped
    conversion table, otherwise the grammar is rejected.
    """
    positive = [r for r in g.positive_rules() if not r.is_noise]
    if all(len(r.lhs) == 1 for r in positive):
        return _generic_cfg_lcfrs(g)
    shape = match_triangle(g)
    if shape is None:
        offending = [r.id for r in positive if len(r.lhs) > 1]
        raise UnsupportedGrammarError(
            "no fan-out-2 conversion table covers context-sensitive rules "
            f"{offending}"
        )
    return _triangle_lcfrs(g, shape)


_conversion_cache: dict[tuple, Lcfrs] = {}


def lcfrs_for(g: Grammar) -> Lcfrs:
    key = g.fingerprint()
    if key not in _conversion_cache:
        if len(_conversion_cache) > 128:
            _conversion_cache.clear()
        _conversion_cache[key] = grammar_to_lcfrs(g)
    return _conversion_cache[key]


def triangle_conversion_tags(tokens, g: Grammar) -> list[str]:
    """Reconstruct the swap/conversion applications a sentential-form
    derivation of `tokens` uses in the built-in family.

    A b after the d-block converts at the d-boundary, a b after a b by
    b-propagation (falling back to the unit rule when the context rule is
    inactive); c's convert at the b- or c-boundary.  The swap count is the
    number of crossed (b_j, c_i) pairs with j > i, which is exactly how many
    CB -> BC exchanges the rewriting needs.
    """
    shape = match_triangle(g)
    if shape is None:
        raise UnsupportedGrammarError("not the built-in context-sensitive family")
    tags: list[str] = []
    prev = shape.d
    b_seen = 0
    b_before_each_c: list[int] = []
    for tok in tokens:
        if tok == shape.d:
            prev = shape.d
        elif tok == shape.b:
            b_seen += 1
            if prev == shape.d and shape.conv_db:
                tags.append(shape.conv_db)
            elif prev == shape.b and shape.conv_bb:
                tags.append(shape.conv_bb)
            elif shape.unit_b:
                tags.append(shape.unit_b)
            prev = shape.b
        elif tok == shape.c:
            b_before_each_c.append(b_seen)
            tags.append(shape.conv_bc if prev == shape.b else shape.conv_cc)
            prev = shape.c
        else:
            raise ValueError(f"token {tok!r} is not in the family alphabet")
    n_swaps = sum(
        max(0, n_b - i) for i, n_b in enumerate(b_before_each_c, start=1)
    )
    tags.extend([shape.swap] * n_swaps)
    return tags
