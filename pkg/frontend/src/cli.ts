#!/usr/bin/env node
/** Command line entry point.
 *
 *   w2v-extract extract --in <dir> --out <dir> [--layer 14] [--model <id>]
 *                       [--weights <file>]
 *
 * Writes one .ftf feature file per .wav in the input directory. Problems
 * with individual files are reported and the rest of the batch continues;
 * the exit status is 0 only if every file succeeded.
 */

import { realpathSync } from 'node:fs';
import { fileURLToPath } from 'node:url';
import { parseArgs } from 'node:util';

import { DEFAULT_LAYER, DEFAULT_MODEL, listWavFiles, runJob } from './extract.js';

function usage(): string {
	return (
		'usage: w2v-extract extract --in <dir> --out <dir> ' +
		`[--layer ${DEFAULT_LAYER}] [--model ${DEFAULT_MODEL}] [--weights <file>]`
	);
}

export function main(argv: string[]): number {
	let parsed;
	try {
		parsed = parseArgs({
			args: argv,
			allowPositionals: true,
			options: {
				in: { type: 'string' },
				out: { type: 'string' },
				layer: { type: 'string', default: String(DEFAULT_LAYER) },
				model: { type: 'string', default: DEFAULT_MODEL },
				weights: { type: 'string' },
				help: { type: 'boolean', short: 'h' },
			},
		});
	} catch (e) {
		console.error((e as Error).message);
		console.error(usage());
		return 2;
	}

	if (parsed.values.help) {
		console.log(usage());
		return 0;
	}
	const [command] = parsed.positionals;
	if (command !== 'extract' || !parsed.values.in || !parsed.values.out) {
		console.error(usage());
		return 2;
	}
	const layer = Number(parsed.values.layer);
	if (!Number.isInteger(layer) || layer < 0) {
		console.error(`--layer must be a non-negative integer, got ${parsed.values.layer}`);
		return 2;
	}

	let inputs: string[];
	try {
		inputs = listWavFiles(parsed.values.in);
	} catch (e) {
		console.error(`cannot list ${parsed.values.in}: ${(e as Error).message}`);
		return 2;
	}
	if (inputs.length === 0) {
		console.error(`no .wav files in ${parsed.values.in}`);
		return 2;
	}

	let result;
	try {
		result = runJob({
			inputs,
			outDir: parsed.values.out,
			modelId: parsed.values.model,
			layer,
			weightsPath: parsed.values.weights,
		});
	} catch (e) {
		console.error((e as Error).message);
		return 2;
	}

	for (const w of result.written) {
		console.log(`wrote ${w}`);
	}
	for (const f of result.failures) {
		console.error(`failed ${f.file}: ${f.message}`);
	}
	console.log(`${result.written.length} written, ${result.failures.length} failed`);
	return result.failures.length === 0 ? 0 : 1;
}

function isDirectRun(): boolean {
	if (!process.argv[1]) return false;
	try {
		return fileURLToPath(import.meta.url) === realpathSync(process.argv[1]);
	} catch {
		return false;
	}
}

if (isDirectRun()) {
	process.exit(main(process.argv.slice(2)));
}
