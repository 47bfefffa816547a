/* tslint:disable */
/* eslint-disable */

/**
 * Minimax fidelity of the four-node fixture with head weights `(β, 1 − β)`.
 *
 * Returns `[head 1, head 2, combined]`.
 */
export function fixture_fidelity(beta: number, horizon: number): Float64Array;

/**
 * `[exact mixing time, bound 2(n−1)/p, certified p]` for a graph document.
 * The exact time is `-1` when the walk has not mixed within the step cap.
 */
export function graph_mixing(graph_json: string, epsilon: number): Float64Array;

/**
 * A random feedforward graph as `{"n":..,"edges":[[from,to],..]}` (1-based).
 */
export function random_graph(n: number, q: number, seed: bigint): string;

/**
 * Monte-Carlo hitting times on synthetic causal attention.
 *
 * Each head's query `i` puts softmax weight on keys `j ≤ i` with logits
 * `−sharpness·|i − j − 1|` plus noise, so larger `sharpness` means a cleaner
 * one-step-back pattern. Returns the per-start means followed by the overall mean.
 */
export function synthetic_hitting_times(heads: number, n: number, sharpness: number, samples: number, simulations: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fixture_fidelity: (a: number, b: number) => [number, number, number, number];
    readonly graph_mixing: (a: number, b: number, c: number) => [number, number, number, number];
    readonly random_graph: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly synthetic_hitting_times: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
