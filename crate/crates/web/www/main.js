import init, { bm25Search, aggregatePairwise, segmentDocument } from "./pkg/stagerank_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x) => x.toFixed(4);

function el(tag, text) {
  const node = document.createElement(tag);
  if (text !== undefined) node.textContent = text;
  return node;
}

function table(headers, rows) {
  const t = el("table");
  const head = t.insertRow();
  headers.forEach((h) => head.appendChild(el("th", h)));
  rows.forEach((cells) => {
    const row = t.insertRow();
    cells.forEach((c) => row.appendChild(el("td", c)));
  });
  return t;
}

// Runs `compute` and renders its result, or the error message, into `out`.
function wire(button, out, compute) {
  const run = () => {
    const target = $(out);
    target.replaceChildren();
    try {
      target.appendChild(compute());
    } catch (err) {
      target.appendChild(el("p", String(err.message ?? err))).className = "error";
    }
  };
  $(button).addEventListener("click", run);
  run();
}

await init();

wire("bm25-run", "bm25-out", () => {
  const report = JSON.parse(
    bm25Search($("bm25-corpus").value, $("bm25-query").value, num("bm25-k1"), num("bm25-b"), num("bm25-k")),
  );
  const frag = document.createDocumentFragment();
  frag.appendChild(
    el("p", `${report.units} units, mean length ${report.avg_length.toFixed(2)}, terms: ${report.query_terms.join(" ")}`),
  ).className = "muted";
  if (report.hits.length === 0) {
    frag.appendChild(el("p", "No unit matches the query."));
    return frag;
  }
  const rows = report.hits.map((h) => [
    h.rank,
    h.id,
    fmt(h.score),
    h.length,
    h.terms.map((t) => `${t.term}: tf ${t.tf}, idf ${fmt(t.idf)}, ${fmt(t.score)}`).join("; "),
  ]);
  frag.appendChild(table(["rank", "id", "score", "length", "term contributions"], rows));
  return frag;
});

wire("duo-run", "duo-out", () => {
  const report = JSON.parse(aggregatePairwise($("duo-matrix").value));
  const rows = report.map((r) => [r.method, r.order.join(" > "), r.scores.map(fmt).join(", ")]);
  return table(["method", "ranking", "scores (matrix order)"], rows);
});

wire("seg-run", "seg-out", () => {
  const segs = JSON.parse(
    segmentDocument($("seg-title").value, $("seg-body").value, num("seg-window"), num("seg-stride")),
  );
  const rows = segs.map((s) => [s.id, `${s.first_sentence}-${s.last_sentence}`, s.text]);
  return table(["passage", "sentences", "text"], rows);
});
