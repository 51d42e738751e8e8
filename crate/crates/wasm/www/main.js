import init, { flowNetwork, transitionMatrices, randomNetwork, sampleData } from "./pkg/evflow_wasm.js";

const $ = (id) => document.getElementById(id);
let lastRandomCsv = null;

function el(tag, attrs = {}, ...children) {
  const e = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) e.setAttribute(k, v);
  for (const c of children) e.append(c);
  return e;
}

const fmt = (x) => x.toFixed(3);

function showError(target, err) {
  target.replaceChildren(el("div", { class: "error" }, String(err.message ?? err)));
}

function refreshTreatments() {
  // a self-flow is cheap and returns the treatment list
  const csv = $("csv").value;
  const lines = csv.trim().split(/\r?\n/).slice(1);
  const names = [...new Set(lines.map((l) => l.split(",")[1]?.trim()).filter(Boolean))].sort();
  try {
    const view = JSON.parse(flowNetwork(csv, names[0], names[0], "uni", tau()));
    fill(view.treatments);
    $("data-error").textContent = "";
  } catch (err) {
    fill([]);
    $("data-error").textContent = String(err.message ?? err);
  }
}

function fill(names) {
  for (const [id, pick] of [["from", 0], ["to", 1]]) {
    const sel = $(id);
    const keep = sel.value;
    sel.replaceChildren(...names.map((n) => el("option", { value: n }, n)));
    sel.value = names.includes(keep) ? keep : names[Math.min(pick, names.length - 1)] ?? "";
  }
}

function tau() {
  const t = parseFloat($("tau").value);
  return Number.isFinite(t) ? t : 0;
}

function matrixTable(m) {
  const head = el("tr", {}, el("th", { class: "name" }, m.name ?? ""), ...m.cols.map((c) => el("th", {}, c)));
  const rows = m.rows.map((r, i) =>
    el("tr", {}, el("td", { class: "name" }, r), ...m.values[i].map((v) => el("td", {}, fmt(v)))),
  );
  return el("table", {}, head, ...rows);
}

function checksList(checks) {
  return el(
    "ul",
    {},
    ...checks.map((c) =>
      el(
        "li",
        {},
        el("span", { class: c.pass ? "pass" : "fail" }, c.pass ? "PASS " : "FAIL "),
        `${c.name}: max |diff| ${c.max_abs_diff.toExponential(2)} (tolerance ${c.tolerance.toExponential(2)})`,
      ),
    ),
  );
}

function runFlow() {
  const out = $("flow-out");
  const graph = document.querySelector("input[name=graph]:checked").value;
  try {
    const view = JSON.parse(flowNetwork($("csv").value, $("from").value, $("to").value, graph, tau()));
    const flows = view.network.flows;
    const biggest = Math.max(1e-12, ...flows.map((f) => f.magnitude));
    const head = el("tr", {}, ...["edge", "flow", "direction", ""].map((h) => el("th", { class: "name" }, h)));
    const rows = flows.map((f) => {
      const bar = el("span", { class: f.value < 0 ? "bar neg" : "bar" });
      bar.style.width = `${(120 * f.magnitude) / biggest}px`;
      const dir = f.magnitude < 1e-12 ? "" : `${f.from.name} → ${f.to.name}`;
      const name = f.edge.kind === "arm" ? `[${f.edge.trial}, ${f.edge.treatment}]` : `[${f.edge.from}, ${f.edge.to}]`;
      return el("tr", {}, el("td", { class: "name" }, name), el("td", {}, fmt(f.value)), el("td", { class: "name" }, dir), el("td", { class: "name" }, bar));
    });
    out.replaceChildren(el("table", {}, head, ...rows), el("details", {}, el("summary", {}, "Graphviz DOT"), el("pre", {}, view.dot)));
  } catch (err) {
    showError(out, err);
  }
}

function runWalks() {
  const out = $("walk-out");
  try {
    const view = JSON.parse(transitionMatrices($("csv").value, tau()));
    out.replaceChildren(checksList(view.checks), ...view.matrices.map(matrixTable));
  } catch (err) {
    showError(out, err);
  }
}

function runRandom() {
  const out = $("random-out");
  try {
    const view = JSON.parse(randomNetwork(+$("seed").value, +$("max-n").value, +$("max-m").value));
    lastRandomCsv = view.csv;
    $("random-use").disabled = false;
    out.replaceChildren(
      el("p", {}, `${view.treatments} treatments, ${view.trials} trials, ${view.arms} arms`),
      checksList(view.checks),
      el("details", {}, el("summary", {}, "Data"), el("pre", {}, view.csv)),
      el("details", {}, el("summary", {}, "Graphviz DOT"), el("pre", {}, view.dot)),
    );
  } catch (err) {
    showError(out, err);
  }
}

await init();
for (const b of document.querySelectorAll("[data-sample]")) {
  b.addEventListener("click", () => {
    $("csv").value = sampleData(b.dataset.sample);
    refreshTreatments();
  });
}
$("csv").addEventListener("change", refreshTreatments);
$("flow-run").addEventListener("click", runFlow);
$("walk-run").addEventListener("click", runWalks);
$("random-run").addEventListener("click", runRandom);
$("random-use").addEventListener("click", () => {
  $("csv").value = lastRandomCsv;
  refreshTreatments();
});
$("csv").value = sampleData("fictional");
refreshTreatments();
runFlow();
