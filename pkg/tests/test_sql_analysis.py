import pytest
from hypothesis import given, settings, strategies as st

from sketchsql.errors import PredicateNotFoundError, SqlParseError
from sketchsql.sql_analysis import (
    Between,
    Binary,
    ColumnRef,
    Exists,
    FuncCall,
    InList,
    InSelect,
    IsNull,
    Join,
    Like,
    Literal,
    OrderItem,
    ParsedQuery,
    Predicate,
    ScalarSubquery,
    Select,
    SelectItem,
    SetOp,
    SubqueryTable,
    TableRef,
    Unary,
    alias_map,
    extract_predicates,
    from_tables,
    merge_like_pattern,
    order_sensitive,
    parse_sql,
    render_query,
    rewrite_predicate,
    split_like_pattern,
    tokenize,
)


# --------------------------------------------------------------------------
# Tokenizer

def test_tokenize_strings_and_escapes():
    tokens = tokenize("'it''s' \"a\"\"b\" `col x` 0.5 1e3 .25 <> <= == ||")
    kinds = [(t.kind, t.text) for t in tokens[:-1]]
    assert kinds == [
        ("string", "'it''s'"),
        ("string", '"a""b"'),
        ("qident", "col x"),
        ("number", "0.5"),
        ("number", "1e3"),
        ("number", ".25"),
        ("op", "<>"),
        ("op", "<="),
        ("op", "=="),
        ("op", "||"),
    ]
    assert tokens[-1].kind == "end"


def test_tokenize_positions():
    tokens = tokenize("a  = 1")
    assert [(t.text, t.pos) for t in tokens[:-1]] == [("a", 0), ("=", 3), ("1", 5)]


def test_tokenize_unterminated_string():
    with pytest.raises(SqlParseError) as err:
        tokenize("SELECT 'oops")
    assert "position 7" in str(err.value)


def test_tokenize_unexpected_character():
    with pytest.raises(SqlParseError):
        tokenize("SELECT ?")


# --------------------------------------------------------------------------
# Parse -> render fixpoint on representative queries

FIXPOINT_QUERIES = [
    "SELECT a FROM t",
    "SELECT DISTINCT a, b AS label FROM t WHERE a = 'x' AND b > 3",
    "SELECT count(*) FROM t GROUP BY a HAVING count(*) > 2 ORDER BY a DESC",
    "SELECT a FROM t1 JOIN t2 ON t1.id = t2.id LEFT JOIN t3 ON t2.id = t3.id",
    "SELECT a FROM t1, t2 WHERE t1.id = t2.id",
    "SELECT a FROM t WHERE b IN (1, 2, 3) OR c NOT IN (SELECT d FROM u)",
    "SELECT a FROM t WHERE b BETWEEN 1 AND 10 AND c LIKE '%x%'",
    "SELECT a FROM t WHERE NOT EXISTS (SELECT 1 FROM u WHERE u.id = t.id)",
    "SELECT a FROM t WHERE b IS NOT NULL ORDER BY a LIMIT 5 OFFSET 2",
    "SELECT a FROM t UNION SELECT b FROM u INTERSECT SELECT c FROM v",
    "SELECT (a + b) * c, -d FROM t WHERE (a OR b) AND c",
    "SELECT t.* , a || 'suffix' FROM t WHERE a = (SELECT max(b) FROM u)",
]


@pytest.mark.parametrize("sql", FIXPOINT_QUERIES)
def test_render_parse_fixpoint(sql):
    once = render_query(parse_sql(sql))
    assert render_query(parse_sql(once)) == once
    assert parse_sql(once).root == parse_sql(sql).root


@pytest.mark.parametrize("raw,canonical", [
    ("SELECT a FROM t WHERE a == 1", "SELECT a FROM t WHERE a = 1"),
    ("SELECT a FROM t INNER JOIN u ON t.i = u.i",
     "SELECT a FROM t JOIN u ON t.i = u.i"),
    ("SELECT a FROM t LEFT OUTER JOIN u ON t.i = u.i",
     "SELECT a FROM t LEFT JOIN u ON t.i = u.i"),
    ("SELECT a FROM t LIMIT 2, 5", "SELECT a FROM t LIMIT 5 OFFSET 2"),
    ("SELECT a FROM t LIMIT 5 OFFSET 2", "SELECT a FROM t LIMIT 5 OFFSET 2"),
    ("select a from t where b like 'x%';", "SELECT a FROM t WHERE b LIKE 'x%'"),
    ("SELECT a FROM t x", "SELECT a FROM t AS x"),
    ("SELECT `weird name` FROM `the table`",
     "SELECT `weird name` FROM `the table`"),
])
def test_normalizations(raw, canonical):
    assert render_query(parse_sql(raw)) == canonical


@pytest.mark.parametrize("sql,fragment", [
    ("INSERT INTO t VALUES (1)", "SELECT"),
    ("SELECT a FROM t RIGHT JOIN u ON 1", "JOIN"),
    ("SELECT CASE WHEN a THEN 1 END FROM t", "CASE"),
    ("SELECT a FROM", ""),
    ("SELECT a FROM t WHERE a = 1 42", ""),
    ("SELECT a FROM t WHERE", ""),
    ("", ""),
])
def test_rejections(sql, fragment):
    with pytest.raises(SqlParseError) as err:
        parse_sql(sql)
    assert fragment.lower() in str(err.value).lower()
    assert "position" in str(err.value)


def test_parse_error_reports_position():
    with pytest.raises(SqlParseError) as err:
        parse_sql("SELECT a FROM t WHERE AND")
    assert err.value.position is not None


def test_precedence_shapes():
    root = parse_sql("SELECT 1 FROM t WHERE a OR b AND c").root
    assert root.where.op == "OR"
    assert root.where.right.op == "AND"
    root = parse_sql("SELECT 1 FROM t WHERE (a OR b) AND c").root
    assert root.where.op == "AND"
    assert render_query(parse_sql("SELECT 1 FROM t WHERE (a OR b) AND c")) == \
        "SELECT 1 FROM t WHERE (a OR b) AND c"
    assert render_query(parse_sql("SELECT a - (b - c) FROM t")) == \
        "SELECT a - (b - c) FROM t"
    assert render_query(parse_sql("SELECT a - b - c FROM t")) == \
        "SELECT a - b - c FROM t"


def test_not_binds_looser_than_comparison():
    root = parse_sql("SELECT 1 FROM t WHERE NOT a = 1").root
    assert isinstance(root.where, Unary) and root.where.op == "NOT"
    assert isinstance(root.where.operand, Binary)


# --------------------------------------------------------------------------
# Predicate extraction

def canon(preds):
    return [(p.column, p.operator, p.value, p.depth) for p in preds]


def test_extract_basic_predicates():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE name = 'Tim' AND age = 7 OR city LIKE '%york%'"))
    assert canon(preds) == [
        ("name", "=", "Tim", 0),
        ("city", "LIKE", "%york%", 0),
    ]


def test_extract_orientation_and_qualifiers():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t AS x WHERE 'Tim' = x.name"))
    assert canon(preds) == [("x.name", "=", "Tim", 0)]


def test_extract_in_elements():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE city IN ('NY', 'LA', 3)"))
    assert canon(preds) == [
        ("city", "IN-element", "NY", 0),
        ("city", "IN-element", "LA", 0),
    ]


def test_extract_includes_not_wrapped_and_negated():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE NOT (name = 'Tim') AND city NOT LIKE 'L%'"))
    assert canon(preds) == [
        ("name", "=", "Tim", 0),
        ("city", "LIKE", "L%", 0),
    ]


def test_extract_excludes_join_on_and_select_items():
    preds = extract_predicates(parse_sql(
        "SELECT 'label', a FROM t JOIN u ON t.k = 'x' "
        "WHERE t.name = 'Tim' GROUP BY a ORDER BY 'z'"))
    assert canon(preds) == [("t.name", "=", "Tim", 0)]


def test_extract_having_and_subquery_depth():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE b IN (SELECT c FROM u WHERE d = 'deep') "
        "GROUP BY name HAVING name = 'Tim'"))
    assert canon(preds) == [
        ("d", "=", "deep", 1),
        ("name", "=", "Tim", 0),
    ]


def test_extract_skips_aggregate_comparisons():
    # Only plain column references carry calibratable values.
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t GROUP BY a HAVING max(name) = 'Tim'"))
    assert preds == []


def test_double_quoted_strings_are_literals():
    preds = extract_predicates(parse_sql('SELECT a FROM t WHERE b = "text"'))
    assert canon(preds) == [("b", "=", "text", 0)]
    sql = render_query(parse_sql('SELECT a FROM t WHERE b = "te""xt"'))
    assert parse_sql(sql).root == parse_sql('SELECT a FROM t WHERE b = "te""xt"').root


def test_extract_document_order():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE z = 'late' AND a = 'early' OR b = 'mid'"))
    assert [p.value for p in preds] == ["late", "early", "mid"]


def test_extract_skips_non_string_comparisons():
    preds = extract_predicates(parse_sql(
        "SELECT a FROM t WHERE a = 1 AND b = c AND d > 'x'"))
    assert preds == []


# --------------------------------------------------------------------------
# Predicate rewriting

def test_rewrite_first_occurrence_only():
    query = parse_sql("SELECT a FROM t WHERE x = 'v' OR x = 'v'")
    out = rewrite_predicate(query, Predicate("x", "=", "v"),
                            Predicate("x", "=", "w"))
    assert render_query(out) == "SELECT a FROM t WHERE x = 'w' OR x = 'v'"


def test_rewrite_preserves_orientation():
    query = parse_sql("SELECT a FROM t WHERE 'v' = x")
    out = rewrite_predicate(query, Predicate("x", "=", "v"),
                            Predicate("x", "=", "w"))
    assert render_query(out) == "SELECT a FROM t WHERE 'w' = x"


def test_rewrite_changes_column_and_value():
    query = parse_sql("SELECT a FROM t WHERE given = 'wards'")
    out = rewrite_predicate(query, Predicate("given", "=", "wards"),
                            Predicate("last", "=", "ward"))
    assert render_query(out) == "SELECT a FROM t WHERE last = 'ward'"


def test_rewrite_like_pattern():
    query = parse_sql("SELECT a FROM t WHERE name LIKE '%tim%'")
    out = rewrite_predicate(query, Predicate("name", "LIKE", "%tim%"),
                            Predicate("name", "LIKE", "%timmy%"))
    assert render_query(out) == "SELECT a FROM t WHERE name LIKE '%timmy%'"


def test_rewrite_in_element():
    query = parse_sql("SELECT a FROM t WHERE city IN ('NY', 'LA')")
    out = rewrite_predicate(query, Predicate("city", "IN-element", "LA"),
                            Predicate("city", "IN-element", "SF"))
    assert render_query(out) == "SELECT a FROM t WHERE city IN ('NY', 'SF')"


def test_rewrite_inside_subquery():
    query = parse_sql("SELECT a FROM t WHERE b IN (SELECT c FROM u WHERE d = 'x')")
    out = rewrite_predicate(query, Predicate("d", "=", "x", depth=1),
                            Predicate("d", "=", "y", depth=1))
    assert "d = 'y'" in render_query(out)


def test_rewrite_missing_predicate():
    query = parse_sql("SELECT a FROM t WHERE x = 'v'")
    with pytest.raises(PredicateNotFoundError):
        rewrite_predicate(query, Predicate("x", "=", "nope"),
                          Predicate("x", "=", "w"))


def test_rewrite_does_not_mutate_input():
    query = parse_sql("SELECT a FROM t WHERE x = 'v'")
    rewrite_predicate(query, Predicate("x", "=", "v"), Predicate("x", "=", "w"))
    assert render_query(query) == "SELECT a FROM t WHERE x = 'v'"


def test_rewrite_escapes_quotes():
    query = parse_sql("SELECT a FROM t WHERE x = 'v'")
    out = rewrite_predicate(query, Predicate("x", "=", "v"),
                            Predicate("x", "=", "o'brien"))
    rendered = render_query(out)
    assert "'o''brien'" in rendered
    assert extract_predicates(parse_sql(rendered))[0].value == "o'brien"


# --------------------------------------------------------------------------
# Query-shape utilities

def test_from_tables_order_and_dedupe():
    query = parse_sql("SELECT 1 FROM b, a JOIN B ON 1 = 1")
    assert from_tables(query) == ["b", "a"]


def test_alias_map():
    query = parse_sql("SELECT 1 FROM people AS p JOIN dogs d ON p.id = d.oid")
    assert alias_map(query) == {"p": "people", "people": "people",
                                "d": "dogs", "dogs": "dogs"}


def test_order_sensitive():
    assert order_sensitive(parse_sql("SELECT a FROM t ORDER BY a"))
    assert not order_sensitive(parse_sql("SELECT a FROM t"))
    assert order_sensitive(parse_sql(
        "SELECT a FROM t UNION SELECT b FROM u ORDER BY 1"))


@pytest.mark.parametrize("pattern,parts", [
    ("%tim%", ("%", "tim", "%")),
    ("tim", ("", "tim", "")),
    ("%%ti_m_", ("%%", "ti_m", "_")),
    ("_x%", ("_", "x", "%")),
])
def test_split_like_pattern(pattern, parts):
    assert split_like_pattern(pattern) == parts
    assert merge_like_pattern(*split_like_pattern(pattern)) == pattern


# --------------------------------------------------------------------------
# Property: every well-formed tree survives render -> parse intact

_COLS = ("col_a", "col_b", "total", "label")
_TABLES = ("tab_x", "tab_y", "people")

_column = st.builds(ColumnRef,
                    st.sampled_from((None,) + _TABLES),
                    st.sampled_from(_COLS))
_number = st.one_of(
    st.integers(0, 999).map(lambda n: Literal(str(n), "number")),
    st.sampled_from(["0.5", "1.25", "2e2"]).map(lambda s: Literal(s, "number")),
)
_string = st.text(alphabet="abc x'_%", max_size=6).map(Literal.string)
_scalar = st.one_of(_column, _number, _string)


def _values(depth: int):
    if depth <= 0:
        return _scalar
    inner = _values(depth - 1)
    return st.one_of(
        _scalar,
        st.builds(FuncCall, st.sampled_from(("count", "max", "lower")),
                  st.tuples(inner), st.booleans()),
        st.builds(lambda name: FuncCall(name, (ColumnRef(None, "*"),)),
                  st.just("count")),
        st.builds(Binary, st.sampled_from(("+", "-", "*", "/", "||")),
                  inner, inner),
        st.builds(Unary, st.just("-"), _scalar),
    )


def _conditions(depth: int, subquery):
    value = _values(1)
    comparison = st.one_of(
        st.builds(Binary, st.sampled_from(("=", "<", ">", "<=", ">=", "<>")),
                  value, value),
        st.builds(Like, _column, _string, st.booleans()),
        st.builds(IsNull, _column, st.booleans()),
        st.builds(InList, _column,
                  st.lists(_scalar, min_size=1, max_size=3).map(tuple),
                  st.booleans()),
    )
    if subquery is not None:
        comparison = st.one_of(
            comparison,
            st.builds(InSelect, _column, subquery, st.booleans()),
            st.builds(Exists, subquery),
            st.builds(Binary, st.just("="), _column,
                      st.builds(ScalarSubquery, subquery)),
        )
    comparison = st.one_of(comparison,
                           st.builds(Between, _column, _number, _number,
                                     st.booleans()))
    if depth <= 0:
        return comparison
    inner = _conditions(depth - 1, subquery)
    return st.one_of(
        comparison,
        st.builds(Binary, st.sampled_from(("AND", "OR")), inner, inner),
        st.builds(Unary, st.just("NOT"), inner),
    )


@st.composite
def _selects(draw, depth: int = 1):
    subquery = _selects(depth - 1) if depth > 0 else None
    items = tuple(
        SelectItem(draw(_values(1)), draw(st.sampled_from((None, "alias_a"))))
        for _ in range(draw(st.integers(1, 3))))
    source = TableRef(draw(st.sampled_from(_TABLES)),
                      draw(st.sampled_from((None, "s"))))
    if subquery is not None and draw(st.booleans()):
        source = SubqueryTable(draw(subquery), "sub")
    joins = []
    for kind in draw(st.lists(
            st.sampled_from((",", "JOIN", "LEFT JOIN", "CROSS JOIN")),
            max_size=2)):
        table = TableRef(draw(st.sampled_from(_TABLES)))
        on = None
        if kind in ("JOIN", "LEFT JOIN"):
            on = Binary("=", draw(_column), draw(_column))
        joins.append(Join(kind, table, on))
    where = draw(st.one_of(st.none(), _conditions(1, subquery)))
    group_by = tuple(draw(st.lists(_column, max_size=2)))
    having = None
    if group_by:
        having = draw(st.one_of(st.none(), _conditions(0, None)))
    order_by = tuple(
        OrderItem(draw(_column), draw(st.sampled_from((None, "ASC", "DESC"))))
        for _ in range(draw(st.integers(0, 2))))
    limit = draw(st.one_of(st.none(), _number))
    offset = draw(_number) if limit is not None and draw(st.booleans()) else None
    return Select(draw(st.booleans()), items, source, tuple(joins), where,
                  group_by, having, order_by, limit, offset)


_queries = st.one_of(
    _selects(),
    st.builds(SetOp,
              st.sampled_from(("UNION", "UNION ALL", "INTERSECT", "EXCEPT")),
              _selects(0), _selects(0)),
)


@settings(max_examples=200, deadline=None)
@given(_queries)
def test_random_tree_survives_render_parse(tree):
    rendered = render_query(tree)
    parsed = parse_sql(rendered)
    assert parsed.root == tree
    assert render_query(parsed) == rendered


@settings(max_examples=100, deadline=None)
@given(_queries)
def test_random_tree_predicates_extract_and_rewrite(tree):
    rendered = render_query(tree)
    query = parse_sql(rendered)
    for pred in extract_predicates(query):
        out = rewrite_predicate(query, pred,
                                Predicate(pred.column, pred.operator,
                                          "swapped", pred.depth))
        assert "swapped" in render_query(out)
