// Tiny DOM helpers; no framework.

type Attrs = Record<string, string | boolean | ((e: Event) => void) | null | undefined>;

export function el(
  tag: string,
  attrs: Attrs = {},
  ...children: Array<string | Node | null | undefined>
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (value == null || value === false) continue;
    if (key === "className" && typeof value === "string") node.className = value;
    else if (key.startsWith("on") && typeof value === "function")
      node.addEventListener(key.slice(2).toLowerCase(), value as EventListener);
    else if (value === true) node.setAttribute(key, "");
    else if (typeof value === "string") node.setAttribute(key, value);
  }
  for (const child of children) {
    if (typeof child === "string") node.appendChild(document.createTextNode(child));
    else if (child) node.appendChild(child);
  }
  return node;
}

export function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function roundHalfUp(x: number): number {
  return Math.floor(x + 0.5);
}

export function fmt(value: number | null | undefined, digits = 3): string {
  return value == null ? "N/A" : value.toFixed(digits);
}
