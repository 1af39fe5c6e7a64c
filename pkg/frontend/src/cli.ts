/**
 * Standalone renderer:
 *   node dist/cli.js render --kind convergence --in runs/ --out fig.svg
 */

import { PlotKind, PlotSpec, render } from "./render.js";
import { SchemaError } from "./schema.js";

const KINDS: PlotKind[] = ["convergence", "ecdf", "ablation-box"];

function parseArgs(argv: string[]): PlotSpec {
  if (argv[0] !== "render") {
    throw new SchemaError(`unknown command ${argv[0] ?? "<none>"}; expected 'render'`);
  }
  const opts = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new SchemaError(`bad argument pair at ${key}`);
    }
    opts.set(key.slice(2), value);
  }
  const kind = opts.get("kind") as PlotKind | undefined;
  if (!kind || !KINDS.includes(kind)) {
    throw new SchemaError(`--kind must be one of ${KINDS.join(", ")}`);
  }
  const inputDir = opts.get("in");
  const outputPath = opts.get("out");
  if (!inputDir || !outputPath) {
    throw new SchemaError("--in and --out are required");
  }
  return {
    kind,
    inputDir,
    outputPath,
    logScale: opts.get("log") !== "false",
    title: opts.get("title"),
  };
}

export function main(argv: string[]): number {
  try {
    const spec = parseArgs(argv);
    const out = render(spec);
    console.log(`wrote ${out}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

process.exit(main(process.argv.slice(2)));
